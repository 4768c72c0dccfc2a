//! Linear mixed-effects model with random intercept and slope, fitted by
//! restricted maximum likelihood (REML).
//!
//! The variance parameters are `φ = (ln σ², ln L₁₁, L₂₁, ln L₂₂)` with
//! `D = L Lᵀ`, so every point of the search space is a valid covariance. The
//! fixed effects are profiled out by generalized least squares. The simplex
//! search is followed by a BFGS polish that uses the analytic REML gradient.

use std::f64::consts::PI;

use log::warn;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::cohort::CohortDataset;
use crate::design::{build_all, BaselineMode, DesignPair, Outcome, SubjectDesign, DEFAULT_KNOT_MONTHS};
use crate::error::{PbcError, Result};
use crate::linalg::{cholesky, dependent_columns, log_cholesky_to_cov, min_eigenvalue, symmetrize};
use crate::optim::{bfgs, nelder_mead, BfgsSettings, NelderMeadSettings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmmSettings {
    pub knot_months: f64,
    pub baseline_mode: BaselineMode,
    /// Simplex iteration cap.
    pub max_iter: usize,
    /// Relative spread of simplex objective values at convergence.
    pub ftol_rel: f64,
    /// Gradient tolerance (max-norm, log-parameter scale) for the BFGS polish.
    pub gtol: f64,
}

impl Default for LmmSettings {
    fn default() -> Self {
        Self {
            knot_months: DEFAULT_KNOT_MONTHS,
            baseline_mode: BaselineMode::Covariate,
            max_iter: 500,
            ftol_rel: 1e-10,
            gtol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmmFit {
    pub beta_hat: DVector<f64>,
    pub d_hat: Matrix2<f64>,
    pub sigma2_hat: f64,
    pub var_beta_hat: DMatrix<f64>,
    pub reml_loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub knot_months: f64,
    pub baseline_mode: BaselineMode,
    pub column_names: Vec<String>,
    pub n_subjects: usize,
    pub n_observations: usize,
    /// REML log-likelihood of the best point after each accepted optimizer
    /// iteration.
    pub reml_trace: Vec<f64>,
}

/// Predicted random effects for one subject with the variance pieces needed
/// for the subject-specific prediction variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BlupResult {
    pub b_hat: Vector2<f64>,
    /// `Var(b̂ − b)`.
    pub var_bhat_minus_b: Matrix2<f64>,
    /// `Cov(β̂, b̂ − b)`, M × 2.
    pub cov_beta_bhat: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy)]
pub enum VarianceMode<'a> {
    /// `x Var(β̂) xᵀ + σ²`.
    NewIndividualSimple,
    /// `x Var(β̂) xᵀ + z D zᵀ + σ²`.
    NewIndividualWithRe,
    /// Full form around the subject's predicted random effects.
    KnownIndividual(&'a BlupResult),
}

/// Payload-free selector for the two new-individual variance forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NewIndividualVariance {
    Simple,
    #[default]
    WithRandomEffects,
}

impl NewIndividualVariance {
    pub fn mode(self) -> VarianceMode<'static> {
        match self {
            NewIndividualVariance::Simple => VarianceMode::NewIndividualSimple,
            NewIndividualVariance::WithRandomEffects => VarianceMode::NewIndividualWithRe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

struct PreparedSubject {
    z: DMatrix<f64>,
    /// `[X | y]`.
    xy: DMatrix<f64>,
}

/// Profiled REML criterion over a fixed set of subject designs.
pub struct RemlProblem {
    subjects: Vec<PreparedSubject>,
    p: usize,
    n: usize,
}

#[derive(Debug, Clone)]
pub struct RemlEval {
    pub loglik: f64,
    pub beta: DVector<f64>,
    pub var_beta: DMatrix<f64>,
}

impl RemlProblem {
    pub fn new(designs: &[SubjectDesign]) -> Result<Self> {
        let p = designs.first().map(|d| d.design.x.ncols()).unwrap_or(0);
        let mut n = 0;
        let subjects = designs
            .iter()
            .map(|d| {
                let rows = d.design.n_rows();
                if d.response.len() != rows {
                    return Err(PbcError::LengthMismatch { expected: rows, actual: d.response.len() });
                }
                if d.design.x.ncols() != p {
                    return Err(PbcError::LengthMismatch { expected: p, actual: d.design.x.ncols() });
                }
                n += rows;
                let mut xy = DMatrix::zeros(rows, p + 1);
                xy.columns_mut(0, p).copy_from(&d.design.x);
                xy.column_mut(p).copy_from(&d.response);
                Ok(PreparedSubject { z: d.design.z.clone(), xy })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { subjects, p, n })
    }

    pub fn n_observations(&self) -> usize {
        self.n
    }

    fn marginal_cov(z: &DMatrix<f64>, d: &Matrix2<f64>, sigma2: f64) -> DMatrix<f64> {
        let dm = DMatrix::from_fn(2, 2, |i, j| d[(i, j)]);
        let mut v = z * dm * z.transpose();
        for i in 0..v.nrows() {
            v[(i, i)] += sigma2;
        }
        v
    }

    /// REML log-likelihood with the GLS estimate and its covariance, at the
    /// variance parameters `(D, σ²)`.
    pub fn evaluate_at(&self, d: &Matrix2<f64>, sigma2: f64) -> Result<RemlEval> {
        let p = self.p;
        let mut a = DMatrix::<f64>::zeros(p, p);
        let mut c = DVector::<f64>::zeros(p);
        let mut yy = 0.0;
        let mut logdet_v = 0.0;
        for s in &self.subjects {
            let v = Self::marginal_cov(&s.z, d, sigma2);
            let chol = cholesky(v, "marginal covariance")?;
            let l = chol.l_dirty();
            logdet_v += 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
            let w = l.solve_lower_triangular(&s.xy).ok_or_else(|| PbcError::Conditioning("triangular solve".into()))?;
            let wx = w.columns(0, p);
            let wy = w.column(p);
            a += wx.transpose() * wx;
            c += wx.transpose() * wy;
            yy += wy.dot(&wy);
        }
        let chol_a = cholesky(a, "Σ XᵀV⁻¹X")?;
        let beta = chol_a.solve(&c);
        let logdet_a = 2.0 * chol_a.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let q = yy - c.dot(&beta);
        let df = (self.n - p) as f64;
        let loglik = -0.5 * (df * (2.0 * PI).ln() + logdet_v + logdet_a + q);
        let mut var_beta = chol_a.inverse();
        symmetrize(&mut var_beta);
        Ok(RemlEval { loglik, beta, var_beta })
    }

    pub fn loglik(&self, params: &[f64]) -> Result<f64> {
        let (d, s2) = unpack(params);
        self.evaluate_at(&d, s2).map(|e| e.loglik)
    }

    /// Analytic gradient of the REML log-likelihood with respect to
    /// `(ln σ², ln L₁₁, L₂₁, ln L₂₂)`.
    pub fn gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (d, sigma2) = unpack(params);
        let eval = self.evaluate_at(&d, sigma2)?;
        let p = self.p;
        let a_inv = &eval.var_beta;

        let mut tr_vinv = 0.0;
        let mut s_xx = DMatrix::<f64>::zeros(p, p);
        let mut r_vinv2_r = 0.0;
        let mut g_sum = Matrix2::<f64>::zeros();
        let mut q_sum = Matrix2::<f64>::zeros();
        let mut u_sum = Matrix2::<f64>::zeros();
        for s in &self.subjects {
            let v = Self::marginal_cov(&s.z, &d, sigma2);
            let chol = cholesky(v, "marginal covariance")?;
            let x = s.xy.columns(0, p);
            let r = s.xy.column(p) - x * &eval.beta;
            let vinv = chol.inverse();
            tr_vinv += vinv.trace();
            let vinv_x = &vinv * x;
            let vinv_z = &vinv * &s.z;
            let vinv_r = &vinv * &r;
            s_xx += vinv_x.transpose() * &vinv_x;
            r_vinv2_r += vinv_r.dot(&vinv_r);
            let g = s.z.transpose() * &vinv_z;
            let f = x.transpose() * &vinv_z; // p × 2
            let fq = f.transpose() * a_inv * &f;
            let u = s.z.transpose() * &vinv_r;
            for i in 0..2 {
                for j in 0..2 {
                    g_sum[(i, j)] += g[(i, j)];
                    q_sum[(i, j)] += fq[(i, j)];
                    u_sum[(i, j)] += u[i] * u[j];
                }
            }
        }

        let grad_sigma = -0.5 * sigma2 * (tr_vinv - (a_inv * &s_xx).trace() - r_vinv2_r);
        let core = g_sum - q_sum - u_sum;
        let l = crate::linalg::log_cholesky_factor(&params[1..4]);
        let dl = [
            Matrix2::new(l[(0, 0)], 0.0, 0.0, 0.0),
            Matrix2::new(0.0, 0.0, 1.0, 0.0),
            Matrix2::new(0.0, 0.0, 0.0, l[(1, 1)]),
        ];
        let mut grad = vec![grad_sigma];
        for dlk in dl {
            let dd = dlk * l.transpose() + l * dlk.transpose();
            grad.push(-0.5 * (core * dd).trace());
        }
        Ok((eval.loglik, grad))
    }
}

fn unpack(params: &[f64]) -> (Matrix2<f64>, f64) {
    (log_cholesky_to_cov(&params[1..4]), params[0].exp())
}

/// Fits the model to a cohort's continuous cd4 responses.
pub fn fit_lmm(data: &CohortDataset, settings: &LmmSettings) -> Result<LmmFit> {
    if data.n_subjects() < 2 {
        return Err(PbcError::InvalidInput("at least 2 subjects are required".into()));
    }
    let designs = build_all(data.subjects(), settings.knot_months, Outcome::Continuous, settings.baseline_mode)?;
    fit_lmm_designs(&designs, settings)
}

pub(crate) fn check_rank(designs: &[SubjectDesign], names: &[&str]) -> Result<()> {
    let p = names.len();
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    for d in designs {
        xtx += d.design.x.transpose() * &d.design.x;
    }
    let dependent = dependent_columns(&xtx, names);
    if dependent.is_empty() {
        Ok(())
    } else {
        Err(PbcError::SingularDesign { columns: dependent })
    }
}

fn starting_point(designs: &[SubjectDesign]) -> Result<Vec<f64>> {
    let p = designs[0].design.x.ncols();
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut n = 0usize;
    let mut t2 = 0.0;
    for d in designs {
        xtx += d.design.x.transpose() * &d.design.x;
        xty += d.design.x.transpose() * &d.response;
        n += d.response.len();
        t2 += d.design.z.column(1).iter().map(|t| t * t).sum::<f64>();
    }
    let beta = cholesky(xtx, "XᵀX")?.solve(&xty);
    let rss: f64 = designs.iter().map(|d| (&d.response - &d.design.x * &beta).norm_squared()).sum();
    let s2 = (rss / (n.saturating_sub(p).max(1)) as f64).max(1e-8);
    let mean_t2 = (t2 / n as f64).max(1e-8);
    Ok(vec![(0.5 * s2).ln(), (0.5 * s2).sqrt().ln(), 0.0, (0.5 * s2 / mean_t2).sqrt().ln()])
}

pub fn fit_lmm_designs(designs: &[SubjectDesign], settings: &LmmSettings) -> Result<LmmFit> {
    if designs.len() < 2 {
        return Err(PbcError::InvalidInput("at least 2 subjects are required".into()));
    }
    let names = settings.baseline_mode.column_names();
    if designs[0].design.x.ncols() != names.len() {
        return Err(PbcError::LengthMismatch { expected: names.len(), actual: designs[0].design.x.ncols() });
    }
    check_rank(designs, &names)?;
    let x0 = starting_point(designs)?;
    fit_from(designs, settings, &x0)
}

/// σ̂² below this fraction of the response variance counts as the zero
/// boundary.
const SIGMA2_COLLAPSE: f64 = 1e-10;

fn response_variance(designs: &[SubjectDesign]) -> f64 {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for d in designs {
        for &y in d.response.iter() {
            n += 1.0;
            s += y;
            s2 += y * y;
        }
    }
    let m = s / n;
    (s2 / n - m * m).max(0.0)
}

/// Fits starting from the variance parameters `x0 = (ln σ², ln L₁₁, L₂₁, ln L₂₂)`.
pub fn fit_from(designs: &[SubjectDesign], settings: &LmmSettings, x0: &[f64]) -> Result<LmmFit> {
    if x0.len() != 4 {
        return Err(PbcError::LengthMismatch { expected: 4, actual: x0.len() });
    }
    let names = settings.baseline_mode.column_names();
    let problem = RemlProblem::new(designs)?;

    let objective = |x: &[f64]| problem.loglik(x).map(|v| -v).unwrap_or(f64::INFINITY);
    let steps = [1.0, 1.0, 0.5 * x0[3].exp(), 1.0];
    let nm = nelder_mead(
        objective,
        x0,
        &steps,
        NelderMeadSettings { max_iter: settings.max_iter, ftol_rel: settings.ftol_rel },
    );

    let polish = bfgs(
        |x: &[f64]| match problem.gradient(x) {
            Ok((ll, g)) => (-ll, g.into_iter().map(|v| -v).collect()),
            Err(_) => (f64::INFINITY, vec![0.0; 4]),
        },
        &nm.x,
        BfgsSettings { max_iter: 200, gtol: settings.gtol, ftol_rel: 1e-15 },
    );
    let (best_x, best_f) = if polish.f <= nm.f { (polish.x.clone(), polish.f) } else { (nm.x.clone(), nm.f) };
    let converged = nm.converged || polish.converged;
    let iterations = nm.iterations + polish.iterations;
    // Exactly fitted data push σ² to zero, where REML has no maximum.
    let collapsed = best_x[0].exp() <= SIGMA2_COLLAPSE * response_variance(designs);
    if collapsed && !converged {
        warn!("residual variance collapsed to {:e}; the data are fitted exactly", best_x[0].exp());
    }
    if !(converged || collapsed) || !best_f.is_finite() {
        return Err(PbcError::NonConvergence {
            iterations,
            message: "REML optimization did not meet its tolerance".into(),
            last_iterate: best_x,
        });
    }

    let mut trace: Vec<f64> = nm.history.iter().map(|v| -v).collect();
    trace.extend(polish.history.iter().skip(1).map(|v| -v));

    let (d_hat, sigma2_hat) = unpack(&best_x);
    let eval = problem.evaluate_at(&d_hat, sigma2_hat)?;
    Ok(LmmFit {
        beta_hat: eval.beta,
        d_hat,
        sigma2_hat,
        var_beta_hat: eval.var_beta,
        reml_loglik: eval.loglik,
        converged,
        iterations,
        knot_months: settings.knot_months,
        baseline_mode: settings.baseline_mode,
        column_names: names.iter().map(|s| s.to_string()).collect(),
        n_subjects: designs.len(),
        n_observations: problem.n_observations(),
        reml_trace: trace,
    })
}

/// Generalized least squares at known variance components; no optimization.
pub fn fit_with_variances(
    designs: &[SubjectDesign],
    d: Matrix2<f64>,
    sigma2: f64,
    settings: &LmmSettings,
) -> Result<LmmFit> {
    if !(sigma2 > 0.0) {
        return Err(PbcError::InvalidInput("sigma2 must be positive".into()));
    }
    let names = settings.baseline_mode.column_names();
    let problem = RemlProblem::new(designs)?;
    let eval = problem.evaluate_at(&d, sigma2)?;
    Ok(LmmFit {
        beta_hat: eval.beta,
        d_hat: d,
        sigma2_hat: sigma2,
        var_beta_hat: eval.var_beta,
        reml_loglik: eval.loglik,
        converged: true,
        iterations: 0,
        knot_months: settings.knot_months,
        baseline_mode: settings.baseline_mode,
        column_names: names.iter().map(|s| s.to_string()).collect(),
        n_subjects: designs.len(),
        n_observations: problem.n_observations(),
        reml_trace: vec![eval.loglik],
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LmmFit {
    pub fn n_fixed(&self) -> usize {
        self.beta_hat.len()
    }

    fn d_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_fn(2, 2, |i, j| self.d_hat[(i, j)])
    }

    /// Σ̂ᵢ = Zᵢ D̂ Zᵢᵀ + σ̂² I.
    pub fn marginal_cov(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        RemlProblem::marginal_cov(z, &self.d_hat, self.sigma2_hat)
    }

    /// Best linear unbiased predictor `b̂ᵢ = D̂ Zᵢᵀ Σ̂ᵢ⁻¹ (yᵢ − Xᵢ β̂)` with
    /// `Cov(β̂, b̂ᵢ − bᵢ) = −Var(β̂) Xᵢᵀ Σ̂ᵢ⁻¹ Zᵢ D̂` and
    /// `Var(b̂ᵢ − bᵢ) = (D̂ − D̂ Zᵢᵀ Σ̂ᵢ⁻¹ Zᵢ D̂) − Cov(β̂, b̂ᵢ − bᵢ)ᵀ Xᵢᵀ Σ̂ᵢ⁻¹ Zᵢ D̂`.
    ///
    /// The first term is `(ZᵢᵀZᵢ/σ̂² + D̂⁻¹)⁻¹` written without `D̂⁻¹`, so it
    /// stays defined when the fit sits on the boundary with singular `D̂`.
    pub fn blup(&self, design: &DesignPair, response: &DVector<f64>) -> Result<BlupResult> {
        let n = design.n_rows();
        if response.len() != n {
            return Err(PbcError::LengthMismatch { expected: n, actual: response.len() });
        }
        if design.x.ncols() != self.n_fixed() {
            return Err(PbcError::LengthMismatch { expected: self.n_fixed(), actual: design.x.ncols() });
        }
        let d_max = self.d_hat.abs().max();
        if min_eigenvalue(&self.d_hat) <= 1e-10 * d_max.max(f64::MIN_POSITIVE) {
            warn!("D̂ is singular (boundary fit); random-effect variances use the inverse-free form");
        }
        let chol = cholesky(self.marginal_cov(&design.z), "Σ̂ᵢ")?;
        let d = self.d_dyn();
        let resid = response - &design.x * &self.beta_hat;
        let vinv_z = chol.solve(&design.z);
        let b = &d * (vinv_z.transpose() * &resid);
        let xt_vinv_z_d = design.x.transpose() * &vinv_z * &d; // M × 2
        let cov = -(&self.var_beta_hat * &xt_vinv_z_d);
        let t = &d - &d * (design.z.transpose() * &vinv_z) * &d;
        let mut var = t - cov.transpose() * &xt_vinv_z_d;
        symmetrize(&mut var);
        Ok(BlupResult {
            b_hat: Vector2::new(b[0], b[1]),
            var_bhat_minus_b: Matrix2::new(var[(0, 0)], var[(0, 1)], var[(1, 0)], var[(1, 1)]),
            cov_beta_bhat: cov,
        })
    }

    /// `x β̂ + z b`.
    pub fn predict_mean(&self, x: &[f64], z: &[f64], b: &[f64]) -> Result<f64> {
        if x.len() != self.n_fixed() {
            return Err(PbcError::LengthMismatch { expected: self.n_fixed(), actual: x.len() });
        }
        if z.len() != 2 || b.len() != 2 {
            return Err(PbcError::LengthMismatch { expected: 2, actual: z.len().min(b.len()) });
        }
        Ok(dot(x, self.beta_hat.as_slice()) + dot(z, b))
    }

    /// Variance of `ŷ − y` for a new observed value at design row `(x, z)`.
    pub fn prediction_variance(&self, x: &[f64], z: &[f64], mode: VarianceMode<'_>) -> Result<f64> {
        if x.len() != self.n_fixed() {
            return Err(PbcError::LengthMismatch { expected: self.n_fixed(), actual: x.len() });
        }
        if z.len() != 2 {
            return Err(PbcError::LengthMismatch { expected: 2, actual: z.len() });
        }
        let xv = DVector::from_column_slice(x);
        let zv = Vector2::new(z[0], z[1]);
        let fixed = (xv.transpose() * &self.var_beta_hat * &xv)[(0, 0)];
        let random = match mode {
            VarianceMode::NewIndividualSimple => 0.0,
            VarianceMode::NewIndividualWithRe => (zv.transpose() * self.d_hat * zv)[(0, 0)],
            VarianceMode::KnownIndividual(blup) => {
                let cross = (xv.transpose() * &blup.cov_beta_bhat)[(0, 0)] * zv[0]
                    + (xv.transpose() * &blup.cov_beta_bhat)[(0, 1)] * zv[1];
                (zv.transpose() * blup.var_bhat_minus_b * zv)[(0, 0)] + 2.0 * cross
            }
        };
        let v = fixed + random + self.sigma2_hat;
        if !v.is_finite() || v <= 0.0 {
            return Err(PbcError::Conditioning(format!("prediction variance evaluated to {v}")));
        }
        Ok(v)
    }

    /// Covariance of the prediction errors `ŷ − y` for several new observed
    /// values of one subject at design rows `(xs[k], zs[k])`.
    pub fn prediction_covariance(
        &self,
        xs: &[&[f64]],
        zs: &[[f64; 2]],
        mode: VarianceMode<'_>,
    ) -> Result<DMatrix<f64>> {
        if xs.len() != zs.len() {
            return Err(PbcError::LengthMismatch { expected: xs.len(), actual: zs.len() });
        }
        let n = xs.len();
        let p = self.n_fixed();
        let mut x = DMatrix::<f64>::zeros(n, p);
        for (r, row) in xs.iter().enumerate() {
            if row.len() != p {
                return Err(PbcError::LengthMismatch { expected: p, actual: row.len() });
            }
            x.row_mut(r).copy_from_slice(row);
        }
        let z = DMatrix::from_fn(n, 2, |r, c| zs[r][c]);
        let mut v = &x * &self.var_beta_hat * x.transpose();
        match mode {
            VarianceMode::NewIndividualSimple => {}
            VarianceMode::NewIndividualWithRe => v += &z * self.d_dyn() * z.transpose(),
            VarianceMode::KnownIndividual(blup) => {
                let vb = DMatrix::from_fn(2, 2, |i, j| blup.var_bhat_minus_b[(i, j)]);
                let cross = &x * &blup.cov_beta_bhat * z.transpose();
                v += &z * vb * z.transpose() + &cross + cross.transpose();
            }
        }
        for i in 0..n {
            v[(i, i)] += self.sigma2_hat;
            if !(v[(i, i)] > 0.0) || !v[(i, i)].is_finite() {
                return Err(PbcError::Conditioning(format!("prediction variance evaluated to {}", v[(i, i)])));
            }
        }
        symmetrize(&mut v);
        Ok(v)
    }

    /// Mean and variance together; the mean uses `b̂` in the known-individual
    /// mode and `b = 0` otherwise.
    pub fn predict(&self, x: &[f64], z: &[f64], mode: VarianceMode<'_>) -> Result<Prediction> {
        let b = match mode {
            VarianceMode::KnownIndividual(blup) => [blup.b_hat[0], blup.b_hat[1]],
            _ => [0.0, 0.0],
        };
        Ok(Prediction { mean: self.predict_mean(x, z, &b)?, variance: self.prediction_variance(x, z, mode)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::build_all;
    use crate::linalg::cov_to_log_cholesky;
    use crate::optim::central_gradient;
    use crate::sim::{simulate, GenerativeSpec};

    fn small_cohort(n: usize, seed: u64) -> (GenerativeSpec, Vec<SubjectDesign>) {
        let spec = GenerativeSpec { n_subjects: n, ..GenerativeSpec::london_calibrated(seed) };
        let sim = simulate(&spec).unwrap();
        let designs = build_all(sim.dataset.subjects(), 1.0, Outcome::Continuous, BaselineMode::Covariate).unwrap();
        (spec, designs)
    }

    /// Dense Henderson mixed-model equations over all subjects stacked:
    /// returns `([β̂; b̂], C)` where `C` is the inverse coefficient matrix, so
    /// `C` holds Var(β̂), Cov(β̂, b̂ − b) and Var(b̂ − b) in its blocks.
    fn henderson(designs: &[SubjectDesign], d: &Matrix2<f64>, sigma2: f64) -> (DVector<f64>, DMatrix<f64>) {
        let p = designs[0].design.x.ncols();
        let q = 2 * designs.len();
        let dim = p + q;
        let mut lhs = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        let d_inv = d.try_inverse().unwrap();
        for (i, s) in designs.iter().enumerate() {
            let (x, z, y) = (&s.design.x, &s.design.z, &s.response);
            let o = p + 2 * i;
            let xtx = x.transpose() * x / sigma2;
            let xtz = x.transpose() * z / sigma2;
            let ztz = z.transpose() * z / sigma2;
            for r in 0..p {
                for c in 0..p {
                    lhs[(r, c)] += xtx[(r, c)];
                }
                for c in 0..2 {
                    lhs[(r, o + c)] += xtz[(r, c)];
                    lhs[(o + c, r)] += xtz[(r, c)];
                }
            }
            for r in 0..2 {
                for c in 0..2 {
                    lhs[(o + r, o + c)] += ztz[(r, c)] + d_inv[(r, c)];
                }
            }
            let xty = x.transpose() * y / sigma2;
            let zty = z.transpose() * y / sigma2;
            for r in 0..p {
                rhs[r] += xty[r];
            }
            rhs[o] += zty[0];
            rhs[o + 1] += zty[1];
        }
        let sol = lhs.clone().lu().solve(&rhs).unwrap();
        (sol, lhs.try_inverse().unwrap())
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn gls_and_blup_match_mixed_model_equations() {
        let (_, designs) = small_cohort(25, 21);
        let d = Matrix2::new(9000.0, -40.0, -40.0, 12.0);
        let s2 = 3000.0;
        let fit = fit_with_variances(&designs, d, s2, &LmmSettings::default()).unwrap();
        let (sol, c) = henderson(&designs, &d, s2);
        let p = fit.n_fixed();
        for j in 0..p {
            assert!((fit.beta_hat[j] - sol[j]).abs() <= 1e-8 * sol[j].abs().max(1.0), "beta {j}");
            for k in 0..p {
                assert!((fit.var_beta_hat[(j, k)] - c[(j, k)]).abs() <= 1e-8 * c[(j, j)].abs().max(c[(k, k)].abs()));
            }
        }
        for (i, s) in designs.iter().enumerate() {
            let o = p + 2 * i;
            let blup = fit.blup(&s.design, &s.response).unwrap();
            for r in 0..2 {
                assert!(
                    (blup.b_hat[r] - sol[o + r]).abs() <= 1e-8 * sol[o + r].abs().max(1.0),
                    "{} vs {}",
                    blup.b_hat[r],
                    sol[o + r]
                );
                for k in 0..2 {
                    let scale = c[(o + r, o + r)].max(c[(o + k, o + k)]);
                    assert!((blup.var_bhat_minus_b[(r, k)] - c[(o + r, o + k)]).abs() <= 1e-8 * scale);
                }
                for j in 0..p {
                    let scale = (c[(j, j)] * c[(o + r, o + r)]).sqrt();
                    assert!((blup.cov_beta_bhat[(j, r)] - c[(j, o + r)]).abs() <= 1e-8 * scale);
                }
            }
        }
    }

    #[test]
    fn known_individual_variance_matches_joint_covariance() {
        let (_, designs) = small_cohort(15, 4);
        let d = Matrix2::new(8000.0, -30.0, -30.0, 10.0);
        let s2 = 3600.0;
        let fit = fit_with_variances(&designs, d, s2, &LmmSettings::default()).unwrap();
        let (_, c) = henderson(&designs, &d, s2);
        let p = fit.n_fixed();
        let s = &designs[3];
        let blup = fit.blup(&s.design, &s.response).unwrap();
        let x: Vec<f64> = s.design.x.row(0).iter().copied().collect();
        let z = [1.0, 6.5];
        let mut a = DVector::<f64>::zeros(c.nrows());
        for j in 0..p {
            a[j] = x[j];
        }
        a[p + 6] = z[0];
        a[p + 7] = z[1];
        let oracle = (a.transpose() * &c * &a)[(0, 0)] + s2;
        let v = fit.prediction_variance(&x, &z, VarianceMode::KnownIndividual(&blup)).unwrap();
        assert!(rel(v, oracle) < 1e-8, "{v} vs {oracle}");

        let simple = fit.prediction_variance(&x, &z, VarianceMode::NewIndividualSimple).unwrap();
        let with_re = fit.prediction_variance(&x, &z, VarianceMode::NewIndividualWithRe).unwrap();
        let zdz = d[(0, 0)] + 2.0 * z[1] * d[(0, 1)] + z[1] * z[1] * d[(1, 1)];
        assert!(rel(with_re - simple, zdz) < 1e-10);
        assert!(v < with_re, "{v} {with_re}");
    }

    #[test]
    fn two_observation_blup_by_hand() {
        // One subject observed at t = 2 and t = 5; β is treated as known by
        // taking a second subject with an identical design, so the GLS
        // residual cancels and the oracle is plain Gaussian conditioning.
        let (t1, t2) = (2.0, 5.0);
        let (d11, d12, d22, s2) = (400.0, -3.0, 2.0, 100.0);
        let v11 = d11 + 2.0 * t1 * d12 + t1 * t1 * d22 + s2;
        let v22 = d11 + 2.0 * t2 * d12 + t2 * t2 * d22 + s2;
        let v12 = d11 + (t1 + t2) * d12 + t1 * t2 * d22;
        let det = v11 * v22 - v12 * v12;
        let (i11, i12, i22) = (v22 / det, -v12 / det, v11 / det);
        let r = [30.0, -12.0];
        let w = [i11 * r[0] + i12 * r[1], i12 * r[0] + i22 * r[1]];
        let zt_w = [w[0] + w[1], t1 * w[0] + t2 * w[1]];
        let expected = [d11 * zt_w[0] + d12 * zt_w[1], d12 * zt_w[0] + d22 * zt_w[1]];

        let d = Matrix2::new(d11, d12, d12, d22);
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let z = DMatrix::from_row_slice(2, 2, &[1.0, t1, 1.0, t2]);
        let design = DesignPair { x, z, knot_months: 1.0 };
        let fit = LmmFit {
            beta_hat: DVector::from_element(1, 50.0),
            d_hat: d,
            sigma2_hat: s2,
            var_beta_hat: DMatrix::zeros(1, 1),
            reml_loglik: 0.0,
            converged: true,
            iterations: 0,
            knot_months: 1.0,
            baseline_mode: BaselineMode::Covariate,
            column_names: vec!["intercept".into()],
            n_subjects: 1,
            n_observations: 2,
            reml_trace: vec![],
        };
        let y = DVector::from_column_slice(&[50.0 + r[0], 50.0 + r[1]]);
        let blup = fit.blup(&design, &y).unwrap();
        assert!(rel(blup.b_hat[0], expected[0]) < 1e-12);
        assert!(rel(blup.b_hat[1], expected[1]) < 1e-12);

        // Conditional covariance D − D Zᵀ V⁻¹ Z D.
        let g = [
            [i11 + 2.0 * i12 + i22, t1 * i11 + (t1 + t2) * i12 + t2 * i22],
            [0.0, t1 * t1 * i11 + 2.0 * t1 * t2 * i12 + t2 * t2 * i22],
        ];
        let dm = [[d11, d12], [d12, d22]];
        let gm = [[g[0][0], g[0][1]], [g[0][1], g[1][1]]];
        for a in 0..2 {
            for b in 0..2 {
                let mut dgd = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        dgd += dm[a][k] * gm[k][l] * dm[l][b];
                    }
                }
                let cond = dm[a][b] - dgd;
                assert!((blup.var_bhat_minus_b[(a, b)] - cond).abs() < 1e-10 * d11);
            }
        }
    }

    #[test]
    fn zero_random_effects_reduce_to_ols() {
        let (_, designs) = small_cohort(30, 8);
        let s2 = 2500.0;
        let fit = fit_with_variances(&designs, Matrix2::zeros(), s2, &LmmSettings::default()).unwrap();
        let p = fit.n_fixed();
        let mut xtx = DMatrix::<f64>::zeros(p, p);
        let mut xty = DVector::<f64>::zeros(p);
        for s in &designs {
            xtx += s.design.x.transpose() * &s.design.x;
            xty += s.design.x.transpose() * &s.response;
        }
        let inv = xtx.clone().try_inverse().unwrap();
        let beta = &inv * xty;
        for j in 0..p {
            assert!((fit.beta_hat[j] - beta[j]).abs() <= 1e-8 * beta[j].abs().max(1.0));
            assert!(rel(fit.var_beta_hat[(j, j)], s2 * inv[(j, j)]) < 1e-8);
        }
        let blup = fit.blup(&designs[0].design, &designs[0].response).unwrap();
        assert_eq!(blup.b_hat, Vector2::zeros());
        assert!(blup.var_bhat_minus_b.abs().max() < 1e-12);
    }

    #[test]
    fn blup_shrinks_toward_zero_as_noise_grows() {
        let (_, designs) = small_cohort(20, 13);
        let d = Matrix2::new(5000.0, 0.0, 0.0, 10.0);
        let base = fit_with_variances(&designs, d, 3600.0, &LmmSettings::default()).unwrap();
        let s = &designs[2];
        let mut prev = f64::INFINITY;
        for s2 in [1e2, 1e3, 1e4, 1e5, 1e6, 1e8] {
            // Hold β̂ fixed so only the shrinkage factor changes.
            let fit = LmmFit { sigma2_hat: s2, ..base.clone() };
            let blup = fit.blup(&s.design, &s.response).unwrap();
            let norm = blup.b_hat[0].powi(2) / d[(0, 0)] + blup.b_hat[1].powi(2) / d[(1, 1)];
            assert!(norm <= prev * (1.0 + 1e-12), "σ² = {s2}");
            prev = norm;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let (_, designs) = small_cohort(40, 17);
        let problem = RemlProblem::new(&designs).unwrap();
        let lc = cov_to_log_cholesky(&Matrix2::new(7000.0, -50.0, -50.0, 8.0));
        for params in
            [vec![3500f64.ln(), lc[0], lc[1], lc[2]], vec![2000f64.ln(), lc[0] - 0.4, lc[1] + 3.0, lc[2] + 0.5]]
        {
            let (_, g) = problem.gradient(&params).unwrap();
            let mut f = |x: &[f64]| problem.loglik(x).unwrap();
            let fd = central_gradient(&mut f, &params, 1e-5);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-2), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn restarts_agree_and_trace_is_monotone() {
        let (spec, designs) = small_cohort(60, 31);
        let settings = LmmSettings::default();
        let reference = fit_lmm_designs(&designs, &settings).unwrap();
        for w in reference.reml_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
        }
        let truth = cov_to_log_cholesky(&spec.d_matrix());
        let starts = [
            [spec.sigma2_true.ln(), truth[0], truth[1], truth[2]],
            [8.5, 5.0, 0.0, 0.5],
            [7.0, 4.0, -5.0, 1.5],
            [9.0, 3.5, 2.0, 0.0],
            [8.0, 4.8, -1.0, 2.0],
        ];
        for x0 in starts {
            let fit = fit_from(&designs, &settings, &x0).unwrap();
            assert!((fit.reml_loglik - reference.reml_loglik).abs() < 1e-6, "{x0:?}");
            assert!(rel(fit.sigma2_hat, reference.sigma2_hat) < 1e-4);
            for (a, b) in fit.beta_hat.iter().zip(reference.beta_hat.iter()) {
                assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0));
            }
            for w in fit.reml_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
            }
        }
        let (_, g) = RemlProblem::new(&designs)
            .unwrap()
            .gradient(&[
                reference.sigma2_hat.ln(),
                cov_to_log_cholesky(&reference.d_hat)[0],
                cov_to_log_cholesky(&reference.d_hat)[1],
                cov_to_log_cholesky(&reference.d_hat)[2],
            ])
            .unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-3), "{g:?}");
    }

    #[test]
    fn collinear_design_is_rejected() {
        let (_, mut designs) = small_cohort(10, 2);
        for s in &mut designs {
            let c = s.design.x.column(2).clone_owned();
            s.design.x.set_column(3, &(c * 2.0));
        }
        match fit_lmm_designs(&designs, &LmmSettings::default()) {
            Err(PbcError::SingularDesign { columns }) => assert!(!columns.is_empty()),
            other => panic!("expected SingularDesign, got {other:?}"),
        }
    }

    #[test]
    fn nonpositive_prediction_variance_is_an_error() {
        let (_, designs) = small_cohort(10, 2);
        let mut fit = fit_with_variances(&designs, Matrix2::identity(), 1.0, &LmmSettings::default()).unwrap();
        fit.sigma2_hat = -1e6;
        let x = vec![0.0; 12];
        assert!(matches!(
            fit.prediction_variance(&x, &[1.0, 0.0], VarianceMode::NewIndividualSimple),
            Err(PbcError::Conditioning(_))
        ));
    }

    #[test]
    fn residuals_orthogonal_after_blup() {
        let (_, designs) = small_cohort(25, 9);
        let d = Matrix2::new(900.0, -10.0, -10.0, 6.0);
        let s2 = 500.0;
        let fit = fit_with_variances(&designs, d, s2, &LmmSettings::default()).unwrap();
        // Mixed-model equations: Σ Xᵢᵀ eᵢ = 0 and Zᵢᵀ eᵢ / σ² = D⁻¹ b̂ᵢ per subject.
        let mut xte = DVector::<f64>::zeros(12);
        let d_inv = d.try_inverse().unwrap();
        for s in &designs {
            let blup = fit.blup(&s.design, &s.response).unwrap();
            let b = DVector::from_vec(vec![blup.b_hat[0], blup.b_hat[1]]);
            let e = &s.response - &s.design.x * &fit.beta_hat - &s.design.z * &b;
            xte += s.design.x.transpose() * &e;
            let lhs = s.design.z.transpose() * &e / s2;
            let rhs = d_inv * blup.b_hat;
            assert!((lhs[0] - rhs[0]).abs() < 1e-8 * rhs[0].abs().max(1.0));
            assert!((lhs[1] - rhs[1]).abs() < 1e-8 * rhs[1].abs().max(1.0));
        }
        let scale: f64 = designs.iter().map(|s| s.response.amax()).fold(0.0, f64::max);
        assert!(xte.amax() < 1e-6 * scale * 1e3, "{xte}");
    }

    #[test]
    fn response_on_fixed_mean_gives_zero_blup() {
        let (_, designs) = small_cohort(15, 4);
        let fit =
            fit_with_variances(&designs, Matrix2::new(400.0, 1.0, 1.0, 2.0), 300.0, &LmmSettings::default()).unwrap();
        let s = &designs[3];
        let y = &s.design.x * &fit.beta_hat;
        let blup = fit.blup(&s.design, &y).unwrap();
        assert!(blup.b_hat.amax() < 1e-9);
    }

    #[test]
    fn intercept_effect_shifts_prediction() {
        let (_, designs) = small_cohort(15, 4);
        let fit =
            fit_with_variances(&designs, Matrix2::new(400.0, 1.0, 1.0, 2.0), 300.0, &LmmSettings::default()).unwrap();
        let x: Vec<f64> = designs[0].design.x.row(1).iter().copied().collect();
        let z = [1.0, designs[0].design.z[(1, 1)]];
        let m0 = fit.predict_mean(&x, &z, &[0.0, 0.0]).unwrap();
        let m1 = fit.predict_mean(&x, &z, &[37.5, 0.0]).unwrap();
        assert!((m1 - m0 - 37.5).abs() < 1e-9);
    }

    #[test]
    fn trajectory_is_continuous_at_knot() {
        let (_, designs) = small_cohort(15, 4);
        let fit =
            fit_with_variances(&designs, Matrix2::new(400.0, 1.0, 1.0, 2.0), 300.0, &LmmSettings::default()).unwrap();
        let base = crate::cohort::Observation { time_months: 0.0, cd4: 220.0, wbc: 5.0, lymph_pct: 24.0 };
        let at = |t: f64| {
            let v = crate::cohort::Observation { time_months: t, ..base };
            let x = crate::design::fixed_row(&base, &v, 1.0, BaselineMode::Covariate);
            fit.predict_mean(&x, &[1.0, t], &[3.0, -1.0]).unwrap()
        };
        let eps = 1e-9;
        assert!((at(1.0 - eps) - at(1.0 + eps)).abs() < 1e-5);
    }

    #[test]
    fn all_modes_reduce_to_sigma2_without_parameter_uncertainty() {
        let (_, designs) = small_cohort(10, 3);
        let mut fit = fit_with_variances(&designs, Matrix2::identity(), 250.0, &LmmSettings::default()).unwrap();
        fit.d_hat = Matrix2::zeros();
        fit.var_beta_hat = DMatrix::zeros(12, 12);
        let s = &designs[0];
        let blup = fit.blup(&s.design, &s.response).unwrap();
        let x: Vec<f64> = s.design.x.row(0).iter().copied().collect();
        let z = [1.0, s.design.z[(0, 1)]];
        for mode in
            [VarianceMode::NewIndividualSimple, VarianceMode::NewIndividualWithRe, VarianceMode::KnownIndividual(&blup)]
        {
            assert!((fit.prediction_variance(&x, &z, mode).unwrap() - 250.0).abs() < 1e-9);
        }
    }

    #[test]
    fn covariance_diagonal_matches_pointwise_variance() {
        let (_, designs) = small_cohort(15, 5);
        let fit =
            fit_with_variances(&designs, Matrix2::new(400.0, -3.0, -3.0, 2.0), 300.0, &LmmSettings::default()).unwrap();
        let s = &designs[1];
        let blup = fit.blup(&s.design, &s.response).unwrap();
        let rows: Vec<Vec<f64>> = (0..2).map(|r| s.design.x.row(r).iter().copied().collect()).collect();
        let zs: Vec<[f64; 2]> = (0..2).map(|r| [1.0, s.design.z[(r, 1)]]).collect();
        let xs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        for mode in
            [VarianceMode::NewIndividualSimple, VarianceMode::NewIndividualWithRe, VarianceMode::KnownIndividual(&blup)]
        {
            let v = fit.prediction_covariance(&xs, &zs, mode).unwrap();
            for k in 0..2 {
                let pv = fit.prediction_variance(&rows[k], &zs[k], mode).unwrap();
                assert!((v[(k, k)] - pv).abs() < 1e-9 * pv);
            }
        }
    }
}
