//! Random effects conditioned on the baseline response alone, and the
//! delta-method variance of a predicted percentage change.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::cohort::{CohortDataset, Subject};
use crate::design::{build_design_only, fixed_row, random_row, BaselineMode};
use crate::error::{PbcError, Result};
use crate::linalg::symmetrize;
use crate::lmm::{BlupResult, LmmFit, VarianceMode};
use crate::rules::RecordScore;
use crate::validation::ScoredRecords;

/// `b̃ᵢ = E(bᵢ | yᵢ₀)` with the variance pieces needed for prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConditionedRe {
    pub b_tilde: Vector2<f64>,
    /// `Var(b̃ᵢ − bᵢ)`.
    pub var_btilde_minus_b: Matrix2<f64>,
    /// `Cov(β̂, b̃ᵢ − bᵢ)`, M × 2.
    pub cov_beta_btilde: DMatrix<f64>,
}

impl BaselineConditionedRe {
    /// Same layout as a BLUP, for use with [`VarianceMode::KnownIndividual`].
    pub fn as_blup(&self) -> BlupResult {
        BlupResult {
            b_hat: self.b_tilde,
            var_bhat_minus_b: self.var_btilde_minus_b,
            cov_beta_bhat: self.cov_beta_btilde.clone(),
        }
    }
}

fn require_response_mode(fit: &LmmFit) -> Result<()> {
    if fit.baseline_mode != BaselineMode::Response {
        return Err(PbcError::InvalidInput(
            "baseline-conditioned random effects need a fit with the baseline cd4 in the response".into(),
        ));
    }
    Ok(())
}

/// Conditions the random effects on the baseline response only. The fit
/// must carry the baseline row in its response vector, so `x₀` is the
/// baseline design row without the baseline-cd4 column and `z₀ = (1, 0)`:
///
/// `b̃ = D̂₁,· (y₀ − x₀β̂) / (D̂₁₁ + σ̂²)`.
pub fn baseline_conditioned_re(fit: &LmmFit, x0: &[f64], y0: f64) -> Result<BaselineConditionedRe> {
    require_response_mode(fit)?;
    if x0.len() != fit.n_fixed() {
        return Err(PbcError::LengthMismatch { expected: fit.n_fixed(), actual: x0.len() });
    }
    let d = fit.d_hat;
    let s = d[(0, 0)] + fit.sigma2_hat;
    if !(s > 0.0) {
        return Err(PbcError::Conditioning("baseline marginal variance is not positive".into()));
    }
    let x = DVector::from_column_slice(x0);
    let resid = y0 - x.dot(&fit.beta_hat);
    let d_row = Vector2::new(d[(0, 0)], d[(0, 1)]);
    let b_tilde = d_row * (resid / s);
    // Cov(β̂, b̃ − b) = −Var(β̂) x₀ᵀ D̂₁,· / s.
    let xt_d = &x * d_row.transpose() / s; // M × 2
    let cov = -(&fit.var_beta_hat * &xt_d);
    let cov = DMatrix::from_column_slice(cov.nrows(), 2, cov.as_slice());
    let adj = cov.transpose() * &xt_d;
    let mut var = DMatrix::from_fn(2, 2, |i, j| d[(i, j)] - d_row[i] * d_row[j] / s - adj[(i, j)]);
    symmetrize(&mut var);
    Ok(BaselineConditionedRe {
        b_tilde,
        var_btilde_minus_b: Matrix2::new(var[(0, 0)], var[(0, 1)], var[(1, 0)], var[(1, 1)]),
        cov_beta_btilde: cov,
    })
}

/// [`baseline_conditioned_re`] for a subject's own baseline visit.
pub fn subject_baseline_re(fit: &LmmFit, subject: &Subject) -> Result<BaselineConditionedRe> {
    let base = subject.baseline();
    let x0 = fixed_row(base, base, fit.knot_months, BaselineMode::Response);
    baseline_conditioned_re(fit, &x0, base.cd4)
}

/// Normal scores for the follow-up records of `data` under a
/// baseline-in-response fit, predicting with `b̃ᵢ`. Follow-up cd4 values
/// are not read.
pub fn baseline_conditioned_scores(fit: &LmmFit, data: &CohortDataset) -> Result<ScoredRecords> {
    require_response_mode(fit)?;
    let mut scores = Vec::with_capacity(data.post_baseline_records());
    let mut cd4 = Vec::with_capacity(data.post_baseline_records());
    for s in data.subjects() {
        let re = subject_baseline_re(fit, s)?.as_blup();
        let design = build_design_only(s, fit.knot_months, BaselineMode::Response)?;
        // Row 0 is the baseline visit itself.
        for r in 1..design.n_rows() {
            let x: Vec<f64> = design.x.row(r).iter().copied().collect();
            let z = [design.z[(r, 0)], design.z[(r, 1)]];
            let p = fit.predict(&x, &z, VarianceMode::KnownIndividual(&re))?;
            scores.push(RecordScore::Normal { mean: p.mean, sd: p.sd() });
        }
        cd4.extend(s.follow_up().iter().map(|o| o.cd4));
    }
    Ok(ScoredRecords { scores, cd4 })
}

/// Default lower limit on `|ŷᵢⱼ|` for forming a ratio, in cells/mm³.
pub const RATIO_FLOOR: f64 = 1.0;

/// Predicted relative change `f = (ŷⱼ − ŷⱼ′) / ŷⱼ` between two visits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PctChangePrediction {
    pub j_time: f64,
    pub jprime_time: f64,
    pub y_j: f64,
    pub y_jprime: f64,
    pub f_hat: f64,
    pub var_f_hat: f64,
}

impl PctChangePrediction {
    /// Normal score for thresholding the change with the interval rule
    /// (experimental).
    pub fn score(&self) -> RecordScore {
        RecordScore::Normal { mean: self.f_hat, sd: self.var_f_hat.sqrt() }
    }
}

/// Gradient of `c / a` with respect to `(a, c)`.
pub fn ratio_gradient(a: f64, c: f64) -> [f64; 2] {
    [-c / (a * a), 1.0 / a]
}

/// Delta-method variance of `c / a` when `(a, c)` has covariance `v`.
pub fn delta_ratio_variance(a: f64, c: f64, v: &Matrix2<f64>) -> f64 {
    let u = ratio_gradient(a, c);
    let u = Vector2::new(u[0], u[1]);
    (u.transpose() * v * u)[(0, 0)].max(0.0)
}

/// Predicted change from visit `j` to visit `j′` with its delta-method
/// variance, using the joint prediction covariance of the two visits.
#[allow(clippy::too_many_arguments)]
pub fn pct_change_prediction(
    fit: &LmmFit,
    x_j: &[f64],
    z_j: [f64; 2],
    x_jp: &[f64],
    z_jp: [f64; 2],
    b: [f64; 2],
    mode: VarianceMode<'_>,
    floor: f64,
) -> Result<PctChangePrediction> {
    let y_j = fit.predict_mean(x_j, &z_j, &b)?;
    let y_jp = fit.predict_mean(x_jp, &z_jp, &b)?;
    if !(y_j.abs() >= floor) {
        return Err(PbcError::NearSingularRatio { value: y_j, floor });
    }
    let v = fit.prediction_covariance(&[x_j, x_jp], &[z_j, z_jp], mode)?;
    let v = Matrix2::new(v[(0, 0)], v[(0, 1)], v[(1, 0)], v[(1, 1)]);
    Ok(PctChangePrediction {
        j_time: z_j[1],
        jprime_time: z_jp[1],
        y_j,
        y_jprime: y_jp,
        f_hat: 1.0 - y_jp / y_j,
        var_f_hat: delta_ratio_variance(y_j, y_jp, &v),
    })
}

/// Experimental: predicted change between each pair of consecutive
/// follow-up visits for new individuals (`b = 0`), with the observed change
/// alongside.
pub fn pct_change_scores(
    fit: &LmmFit,
    data: &CohortDataset,
    mode: VarianceMode<'_>,
) -> Result<(Vec<PctChangePrediction>, Vec<f64>)> {
    if matches!(mode, VarianceMode::KnownIndividual(_)) {
        return Err(PbcError::InvalidInput("percentage-change scores are for new individuals".into()));
    }
    let mut preds = Vec::new();
    let mut observed = Vec::new();
    for s in data.subjects() {
        let base = s.baseline();
        let fu = s.follow_up();
        for w in fu.windows(2) {
            let xj = fixed_row(base, &w[0], fit.knot_months, fit.baseline_mode);
            let xjp = fixed_row(base, &w[1], fit.knot_months, fit.baseline_mode);
            let p = pct_change_prediction(
                fit,
                &xj,
                random_row(&w[0]),
                &xjp,
                random_row(&w[1]),
                [0.0, 0.0],
                mode,
                RATIO_FLOOR,
            )?;
            preds.push(p);
            observed.push((w[0].cd4 - w[1].cd4) / w[0].cd4);
        }
    }
    Ok((preds, observed))
}
