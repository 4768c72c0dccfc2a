//! Logistic mixed-effects model for dichotomized responses.
//!
//! The random effects are written as `b = L u` with `D = L Lᵀ` and
//! `u ~ N(0, I)`. Each subject's marginal likelihood is integrated around the
//! mode of `u` either by the Laplace approximation or by adaptive
//! Gauss–Hermite quadrature; with one node per dimension the two coincide.
//! Fixed effects are optimized over standardized columns and mapped back.

use std::f64::consts::PI;

use log::{info, warn};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::CohortDataset;
use crate::design::{build_all, BaselineMode, DesignPair, Outcome, SubjectDesign, DEFAULT_KNOT_MONTHS};
use crate::error::{PbcError, Result};
use crate::linalg::log_cholesky_factor;
use crate::lmm::check_rank;
use crate::optim::{bfgs_with_inverse_hessian, central_gradient, BfgsSettings};
use crate::quadrature::GaussHermite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMethod {
    Laplace,
    AdaptiveGh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Integration {
    pub method: IntegrationMethod,
    pub nodes_per_dim: usize,
}

impl Integration {
    pub fn laplace() -> Self {
        Self { method: IntegrationMethod::Laplace, nodes_per_dim: 1 }
    }

    pub fn adaptive_gh(nodes_per_dim: usize) -> Self {
        Self { method: IntegrationMethod::AdaptiveGh, nodes_per_dim }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            IntegrationMethod::Laplace if self.nodes_per_dim != 1 => {
                Err(PbcError::InvalidInput("laplace integration uses exactly 1 node".into()))
            }
            IntegrationMethod::AdaptiveGh if self.nodes_per_dim == 0 => {
                Err(PbcError::InvalidInput("adaptive quadrature needs at least 1 node".into()))
            }
            _ => Ok(()),
        }
    }

    fn rule(&self) -> Option<GaussHermite> {
        (self.nodes_per_dim > 1).then(|| GaussHermite::new(self.nodes_per_dim))
    }
}

impl Default for Integration {
    fn default() -> Self {
        Self::laplace()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmmSettings {
    pub knot_months: f64,
    pub baseline_mode: BaselineMode,
    pub integration: Integration,
    /// Fit plain pooled logistic regression (`D = 0`).
    pub fix_d_zero: bool,
    /// With quadrature, fit the Laplace approximation first and start the
    /// quadrature fit from its optimum.
    pub laplace_warm_start: bool,
    pub max_iter: usize,
    /// Gradient tolerance on the standardized scale.
    pub gtol: f64,
}

impl Default for GlmmSettings {
    fn default() -> Self {
        Self {
            knot_months: DEFAULT_KNOT_MONTHS,
            baseline_mode: BaselineMode::Covariate,
            integration: Integration::laplace(),
            fix_d_zero: false,
            laplace_warm_start: true,
            max_iter: 400,
            gtol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmmFit {
    pub beta_hat: DVector<f64>,
    pub d_hat: Matrix2<f64>,
    pub marginal_loglik: f64,
    pub integration: Integration,
    pub converged: bool,
    pub iterations: usize,
    pub threshold_k: f64,
    pub knot_months: f64,
    pub baseline_mode: BaselineMode,
    pub column_names: Vec<String>,
    pub n_subjects: usize,
    pub n_observations: usize,
}

/// Fitted linear predictors beyond this magnitude put probabilities within
/// about 1e-13 of 0 or 1, the signature of (quasi-)separation.
const SEPARATION_ETA: f64 = 30.0;
const NEWTON_MAX_ITER: usize = 100;

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function, computed without overflow and kept strictly inside
/// `(0, 1)`.
pub fn logistic(eta: f64) -> f64 {
    let p = if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `D = L Lᵀ` factor that tolerates a singular `D`.
fn psd_factor(d: &Matrix2<f64>) -> Matrix2<f64> {
    let l11 = d[(0, 0)].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { d[(1, 0)] / l11 } else { 0.0 };
    let l22 = (d[(1, 1)] - l21 * l21).max(0.0).sqrt();
    Matrix2::new(l11, 0.0, l21, l22)
}

/// `g(u) = Σ [y η − log(1 + eᶯ)] − |u|²/2` with `η = offset + (Z L) u`.
fn log_joint(offset: &[f64], zl: &[[f64; 2]], y: &[f64], u: &Vector2<f64>) -> f64 {
    let mut g = -0.5 * u.norm_squared();
    for ((o, m), y) in offset.iter().zip(zl).zip(y) {
        let eta = o + m[0] * u[0] + m[1] * u[1];
        g += y * eta - softplus(eta);
    }
    g
}

/// Newton iterations for the mode of `g`, returning `(û, H)` with
/// `H = −∇²g(û)`.
fn find_mode(offset: &[f64], zl: &[[f64; 2]], y: &[f64], start: Vector2<f64>) -> Option<(Vector2<f64>, Matrix2<f64>)> {
    let mut u = start;
    let mut g_cur = log_joint(offset, zl, y, &u);
    for _ in 0..NEWTON_MAX_ITER {
        let mut grad = -u;
        let mut h = Matrix2::identity();
        for ((o, m), y) in offset.iter().zip(zl).zip(y) {
            let eta = o + m[0] * u[0] + m[1] * u[1];
            let p = logistic(eta);
            let w = p * (1.0 - p);
            grad[0] += (y - p) * m[0];
            grad[1] += (y - p) * m[1];
            h[(0, 0)] += w * m[0] * m[0];
            h[(0, 1)] += w * m[0] * m[1];
            h[(1, 1)] += w * m[1] * m[1];
        }
        h[(1, 0)] = h[(0, 1)];
        let step = h.cholesky()?.solve(&grad);
        let size = step.amax() / (1.0 + u.amax());
        if size < 1e-10 {
            return Some((u, hessian_at(zl, offset, &u)));
        }
        if size < 1e-5 {
            // Inside the quadratic-convergence region function values no
            // longer resolve the gain, so skip the line search.
            u += step;
            g_cur = log_joint(offset, zl, y, &u);
            continue;
        }
        let mut scale = 1.0;
        loop {
            let cand = u + step * scale;
            let g_new = log_joint(offset, zl, y, &cand);
            if g_new >= g_cur {
                u = cand;
                g_cur = g_new;
                break;
            }
            scale *= 0.5;
            if scale < 1e-10 {
                // g is strictly concave: no ascent along the Newton step
                // means u is the mode to working precision.
                return Some((u, hessian_at(zl, offset, &u)));
            }
        }
    }
    None
}

fn hessian_at(zl: &[[f64; 2]], offset: &[f64], u: &Vector2<f64>) -> Matrix2<f64> {
    let mut h = Matrix2::identity();
    for (o, m) in offset.iter().zip(zl) {
        let p = logistic(o + m[0] * u[0] + m[1] * u[1]);
        let w = p * (1.0 - p);
        h[(0, 0)] += w * m[0] * m[0];
        h[(0, 1)] += w * m[0] * m[1];
        h[(1, 1)] += w * m[1] * m[1];
    }
    h[(1, 0)] = h[(0, 1)];
    h
}

/// One subject's log marginal likelihood at fixed `(β, L)`.
fn subject_term(
    offset: &[f64],
    times: &[f64],
    y: &[f64],
    l: &Matrix2<f64>,
    rule: Option<&GaussHermite>,
) -> Result<f64> {
    let zl: Vec<[f64; 2]> = times.iter().map(|t| [l[(0, 0)] + t * l[(1, 0)], t * l[(1, 1)]]).collect();
    let (u_hat, h) = find_mode(offset, &zl, y, Vector2::zeros())
        .ok_or_else(|| PbcError::Conditioning("random-effect mode search did not converge".into()))?;
    let c11 = h[(0, 0)].sqrt();
    let c21 = h[(1, 0)] / c11;
    let c22 = (h[(1, 1)] - c21 * c21).sqrt();
    let log_det_c = (c11 * c22).ln();
    let loglik = match rule {
        None => log_joint(offset, &zl, y, &u_hat) - log_det_c,
        Some(gh) => {
            // u = û + √2 C⁻ᵀ x with H = C Cᵀ.
            let s = std::f64::consts::SQRT_2;
            let mut terms = Vec::with_capacity(gh.nodes.len() * gh.nodes.len());
            for (xk, wk) in gh.nodes.iter().zip(&gh.weights) {
                for (xl, wl) in gh.nodes.iter().zip(&gh.weights) {
                    let u = Vector2::new(u_hat[0] + s * (xk / c11 - c21 * xl / (c11 * c22)), u_hat[1] + s * xl / c22);
                    terms.push(wk.ln() + wl.ln() + log_joint(offset, &zl, y, &u) + xk * xk + xl * xl);
                }
            }
            let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            -PI.ln() - log_det_c + lse
        }
    };
    if !loglik.is_finite() {
        return Err(PbcError::Conditioning("non-finite subject likelihood".into()));
    }
    Ok(loglik)
}

struct BinarySubject {
    x: DMatrix<f64>,
    times: Vec<f64>,
    y: Vec<f64>,
}

struct Problem {
    subjects: Vec<BinarySubject>,
    p: usize,
}

impl Problem {
    fn loglik(&self, beta: &[f64], l: &Matrix2<f64>, rule: Option<&GaussHermite>) -> Result<f64> {
        let b = DVector::from_column_slice(beta);
        let terms: Vec<Result<f64>> = self
            .subjects
            .par_iter()
            .map(|s| {
                let off = &s.x * &b;
                subject_term(off.as_slice(), &s.times, &s.y, l, rule)
            })
            .collect();
        terms.into_iter().sum()
    }

    fn neg_objective(&self, theta: &[f64], rule: Option<&GaussHermite>) -> f64 {
        let l = log_cholesky_factor(&theta[self.p..]);
        match self.loglik(&theta[..self.p], &l, rule) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    }
}

/// Centers and scales every column but the intercept, then whitens the
/// stacked design with its QR factor: `x̃ = x_c W`, `W = √N R⁻¹`, so that
/// `X̃ᵀX̃ = N·I`. Near-collinear columns (time and time after the knot, and
/// their interactions) otherwise leave a long flat ridge in `β`.
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
    w: DMatrix<f64>,
    #[cfg(test)]
    w_inv: DMatrix<f64>,
}

impl Standardizer {
    fn new(designs: &[SubjectDesign]) -> Result<Self> {
        let p = designs[0].design.x.ncols();
        let mut n = 0.0;
        let mut sum = vec![0.0; p];
        let mut sum2 = vec![0.0; p];
        for d in designs {
            for r in 0..d.design.n_rows() {
                n += 1.0;
                for j in 0..p {
                    let v = d.design.x[(r, j)];
                    sum[j] += v;
                    sum2[j] += v * v;
                }
            }
        }
        let mut mean = vec![0.0; p];
        let mut scale = vec![1.0; p];
        for j in 1..p {
            mean[j] = sum[j] / n;
            let var = (sum2[j] / n - mean[j] * mean[j]).max(0.0);
            if var <= 0.0 {
                return Err(PbcError::SingularDesign { columns: vec![format!("column {j}")] });
            }
            scale[j] = var.sqrt();
        }
        let mut s = Self {
            mean,
            scale,
            w: DMatrix::identity(p, p),
            #[cfg(test)]
            w_inv: DMatrix::identity(p, p),
        };
        let rows: usize = designs.iter().map(|d| d.design.n_rows()).sum();
        let mut stacked = DMatrix::zeros(rows, p);
        let mut at = 0;
        for d in designs {
            let xc = s.center_scale(&d.design.x);
            stacked.view_mut((at, 0), (xc.nrows(), p)).copy_from(&xc);
            at += xc.nrows();
        }
        let r = stacked.qr().r() / n.sqrt();
        let w = r
            .clone()
            .try_inverse()
            .filter(|w| w.iter().all(|v| v.is_finite()))
            .ok_or_else(|| PbcError::SingularDesign { columns: vec!["stacked design".into()] })?;
        s.w = w;
        #[cfg(test)]
        {
            s.w_inv = r;
        }
        Ok(s)
    }

    fn center_scale(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for j in 1..x.ncols() {
            for r in 0..x.nrows() {
                out[(r, j)] = (x[(r, j)] - self.mean[j]) / self.scale[j];
            }
        }
        out
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.center_scale(x) * &self.w
    }

    fn to_raw(&self, std_beta: &[f64]) -> DVector<f64> {
        let bc = &self.w * DVector::from_column_slice(std_beta);
        let mut beta = bc.clone();
        let mut shift = 0.0;
        for j in 1..beta.len() {
            beta[j] = bc[j] / self.scale[j];
            shift += beta[j] * self.mean[j];
        }
        beta[0] -= shift;
        beta
    }

    #[cfg(test)]
    fn to_std(&self, raw_beta: &[f64]) -> Vec<f64> {
        let mut bc = DVector::from_column_slice(raw_beta);
        for j in 1..bc.len() {
            bc[0] += raw_beta[j] * self.mean[j];
            bc[j] = raw_beta[j] * self.scale[j];
        }
        (&self.w_inv * bc).iter().copied().collect()
    }
}

/// Rejects responses that hold a single class and designs where one column
/// strictly separates the classes.
pub fn check_separation(designs: &[SubjectDesign], names: &[&str]) -> Result<()> {
    let mut ones = 0usize;
    let mut total = 0usize;
    for d in designs {
        ones += d.response.iter().filter(|&&v| v > 0.5).count();
        total += d.response.len();
    }
    if total == 0 {
        return Err(PbcError::EmptyResponse("no follow-up records to fit".into()));
    }
    if ones == 0 || ones == total {
        return Err(PbcError::Separation(format!(
            "all {total} responses fall in one class ({} the threshold)",
            if ones == 0 { "at or below" } else { "above" }
        )));
    }
    let p = designs[0].design.x.ncols();
    for j in 1..p {
        let (mut lo1, mut hi1, mut lo0, mut hi0) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for d in designs {
            for (r, y) in d.response.iter().enumerate() {
                let v = d.design.x[(r, j)];
                if *y > 0.5 {
                    lo1 = lo1.min(v);
                    hi1 = hi1.max(v);
                } else {
                    lo0 = lo0.min(v);
                    hi0 = hi0.max(v);
                }
            }
        }
        if hi0 < lo1 || hi1 < lo0 {
            let name = names.get(j).copied().unwrap_or("?");
            return Err(PbcError::Separation(format!("column {name} completely separates the classes")));
        }
    }
    Ok(())
}

/// Pooled logistic regression by iteratively reweighted least squares.
struct PooledFit {
    beta: Vec<f64>,
    /// Inverse information at `beta`.
    covariance: DMatrix<f64>,
    iterations: usize,
}

fn pooled_logistic(subjects: &[BinarySubject], p: usize) -> Result<PooledFit> {
    let mut beta = DVector::<f64>::zeros(p);
    let dev = |beta: &DVector<f64>| -> f64 {
        subjects
            .iter()
            .map(|s| {
                let eta = &s.x * beta;
                eta.iter().zip(&s.y).map(|(e, y)| softplus(*e) - y * e).sum::<f64>()
            })
            .sum()
    };
    let mut cur = dev(&beta);
    for it in 1..=100 {
        let mut info = DMatrix::<f64>::zeros(p, p);
        let mut score = DVector::<f64>::zeros(p);
        for s in subjects {
            let eta = &s.x * &beta;
            for r in 0..s.x.nrows() {
                let pr = logistic(eta[r]);
                let w = pr * (1.0 - pr);
                let row = s.x.row(r);
                for a in 0..p {
                    score[a] += (s.y[r] - pr) * row[a];
                    for b in 0..=a {
                        info[(a, b)] += w * row[a] * row[b];
                    }
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        let chol = info
            .cholesky()
            .ok_or_else(|| PbcError::Separation("information matrix became singular during logistic fit".into()))?;
        let step = chol.solve(&score);
        let mut scale = 1.0;
        let mut next;
        loop {
            next = &beta + &step * scale;
            let d = dev(&next);
            if d <= cur + 1e-12 * cur.abs() || scale < 1e-10 {
                let change = cur - d;
                beta = next;
                cur = d;
                if change.abs() <= 1e-13 * cur.abs().max(1.0) && step.amax() * scale < 1e-8 {
                    return Ok(PooledFit {
                        beta: beta.iter().copied().collect(),
                        covariance: chol.inverse(),
                        iterations: it,
                    });
                }
                break;
            }
            scale *= 0.5;
        }
    }
    Err(PbcError::Separation("pooled logistic fit diverged; the classes are (quasi-)separated".into()))
}

fn max_abs_eta(subjects: &[BinarySubject], beta: &[f64]) -> f64 {
    let b = DVector::from_column_slice(beta);
    subjects.iter().map(|s| (&s.x * &b).amax()).fold(0.0, f64::max)
}

fn separation_error() -> PbcError {
    PbcError::Separation(format!(
        "fitted linear predictor exceeded {SEPARATION_ETA} in magnitude; the classes are (quasi-)separated"
    ))
}

/// Fits the model to `cd4 > K` indicators.
pub fn fit_glmm(data: &CohortDataset, threshold_k: f64, settings: &GlmmSettings) -> Result<GlmmFit> {
    if !(threshold_k > 0.0) {
        return Err(PbcError::InvalidInput(format!("threshold must be positive, got {threshold_k}")));
    }
    if data.n_subjects() < 2 {
        return Err(PbcError::InvalidInput("at least 2 subjects are required".into()));
    }
    let designs =
        build_all(data.subjects(), settings.knot_months, Outcome::Dichotomized(threshold_k), settings.baseline_mode)?;
    fit_glmm_designs(&designs, threshold_k, settings)
}

pub fn fit_glmm_designs(designs: &[SubjectDesign], threshold_k: f64, settings: &GlmmSettings) -> Result<GlmmFit> {
    settings.integration.validate()?;
    if designs.len() < 2 {
        return Err(PbcError::InvalidInput("at least 2 subjects are required".into()));
    }
    let names = settings.baseline_mode.column_names();
    if designs[0].design.x.ncols() != names.len() {
        return Err(PbcError::LengthMismatch { expected: names.len(), actual: designs[0].design.x.ncols() });
    }
    check_separation(designs, &names)?;
    check_rank(designs, &names)?;
    let standardizer = Standardizer::new(designs)?;
    let p = names.len();
    let problem = Problem {
        subjects: designs
            .iter()
            .map(|d| BinarySubject {
                x: standardizer.apply(&d.design.x),
                times: d.design.z.column(1).iter().copied().collect(),
                y: d.response.iter().copied().collect(),
            })
            .collect(),
        p,
    };
    let n_observations = problem.subjects.iter().map(|s| s.y.len()).sum();
    let pooled = pooled_logistic(&problem.subjects, p)?;
    let (beta0, irls_iter) = (pooled.beta.clone(), pooled.iterations);
    if max_abs_eta(&problem.subjects, &beta0) > SEPARATION_ETA {
        return Err(separation_error());
    }

    let base = |beta_hat, d_hat, marginal_loglik, integration, iterations| GlmmFit {
        beta_hat,
        d_hat,
        marginal_loglik,
        integration,
        converged: true,
        iterations,
        threshold_k,
        knot_months: settings.knot_months,
        baseline_mode: settings.baseline_mode,
        column_names: names.iter().map(|s| s.to_string()).collect(),
        n_subjects: designs.len(),
        n_observations,
    };

    if settings.fix_d_zero {
        let ll = problem.loglik(&beta0, &Matrix2::zeros(), None)?;
        return Ok(base(standardizer.to_raw(&beta0), Matrix2::zeros(), ll, settings.integration, irls_iter));
    }

    let mut theta = beta0.clone();
    theta.extend_from_slice(&[(0.5f64).ln(), 0.0, (0.05f64).ln()]);
    let bfgs_settings = BfgsSettings { max_iter: settings.max_iter, gtol: settings.gtol, ftol_rel: 1e-12 };
    // Curvature of the pooled fit seeds the quasi-Newton approximation.
    let mut h0 = vec![vec![0.0; p + 3]; p + 3];
    for (a, row) in h0.iter_mut().enumerate().take(p) {
        for (b, v) in row.iter_mut().enumerate().take(p) {
            *v = pooled.covariance[(a, b)];
        }
    }
    for (k, row) in h0.iter_mut().enumerate().skip(p) {
        row[k] = 0.1;
    }
    let run = |rule: Option<&GaussHermite>, start: &[f64], h: Vec<Vec<f64>>| {
        let f = |x: &[f64]| problem.neg_objective(x, rule);
        bfgs_with_inverse_hessian(
            |x: &[f64]| {
                let fx = f(x);
                let mut ff = f;
                let g = if fx.is_finite() { central_gradient(&mut ff, x, 1e-5) } else { vec![0.0; x.len()] };
                (fx, g)
            },
            start,
            Some(h),
            bfgs_settings,
        )
    };

    let rule = settings.integration.rule();
    let mut iterations = 0;
    if rule.is_some() && settings.laplace_warm_start {
        let (warm, h) = run(None, &theta, h0.clone());
        iterations += warm.iterations;
        if warm.f.is_finite() {
            theta = warm.x;
            h0 = h;
        }
    }
    let (result, _) = run(rule.as_ref(), &theta, h0);
    iterations += result.iterations;
    let beta_std = &result.x[..p];
    if max_abs_eta(&problem.subjects, beta_std) > SEPARATION_ETA {
        return Err(separation_error());
    }
    if !result.converged || !result.f.is_finite() {
        let mut last = standardizer.to_raw(beta_std).iter().copied().collect::<Vec<_>>();
        last.extend_from_slice(&result.x[p..]);
        return Err(PbcError::NonConvergence {
            iterations,
            message: "marginal likelihood optimization did not meet its tolerance".into(),
            last_iterate: last,
        });
    }
    let l = log_cholesky_factor(&result.x[p..]);
    info!("glmm fit: {} iterations, loglik {:.6}", iterations, -result.f);
    Ok(base(standardizer.to_raw(beta_std), l * l.transpose(), -result.f, settings.integration, iterations))
}

/// Approximate marginal log-likelihood `Σᵢ log ∫ p(yᵢ | b) N(b; 0, D) db`
/// at raw-scale `β` and covariance `D`.
pub fn marginal_loglik(
    designs: &[SubjectDesign],
    beta: &DVector<f64>,
    d: &Matrix2<f64>,
    integration: Integration,
) -> Result<f64> {
    integration.validate()?;
    let l = psd_factor(d);
    let rule = integration.rule();
    let terms: Vec<Result<f64>> = designs
        .par_iter()
        .map(|s| {
            if s.design.x.ncols() != beta.len() {
                return Err(PbcError::LengthMismatch { expected: beta.len(), actual: s.design.x.ncols() });
            }
            let off = &s.design.x * beta;
            let times: Vec<f64> = s.design.z.column(1).iter().copied().collect();
            subject_term(off.as_slice(), &times, s.response.as_slice(), &l, rule.as_ref())
        })
        .collect();
    terms.into_iter().sum()
}

impl GlmmFit {
    pub fn n_fixed(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn linear_predictor(&self, x: &[f64], z: &[f64], b: &[f64]) -> Result<f64> {
        if x.len() != self.n_fixed() {
            return Err(PbcError::LengthMismatch { expected: self.n_fixed(), actual: x.len() });
        }
        if z.len() != 2 || b.len() != 2 {
            return Err(PbcError::LengthMismatch { expected: 2, actual: z.len().min(b.len()) });
        }
        Ok(x.iter().zip(self.beta_hat.iter()).map(|(a, b)| a * b).sum::<f64>() + z[0] * b[0] + z[1] * b[1])
    }

    /// `θ̂ = logistic(x β̂ + z b)`; pass `b = 0` for a new individual.
    pub fn predict_theta(&self, x: &[f64], z: &[f64], b: &[f64]) -> Result<f64> {
        self.linear_predictor(x, z, b).map(logistic)
    }

    /// Posterior mode of `b` for one subject's binary responses. Falls back
    /// to `b = 0` with a warning if the mode search fails.
    pub fn posterior_mode_re(&self, design: &DesignPair, response: &DVector<f64>) -> Result<Vector2<f64>> {
        if response.len() != design.n_rows() {
            return Err(PbcError::LengthMismatch { expected: design.n_rows(), actual: response.len() });
        }
        if design.x.ncols() != self.n_fixed() {
            return Err(PbcError::LengthMismatch { expected: self.n_fixed(), actual: design.x.ncols() });
        }
        let l = psd_factor(&self.d_hat);
        let off = &design.x * &self.beta_hat;
        let times: Vec<f64> = design.z.column(1).iter().copied().collect();
        let zl: Vec<[f64; 2]> = times.iter().map(|t| [l[(0, 0)] + t * l[(1, 0)], t * l[(1, 1)]]).collect();
        match find_mode(off.as_slice(), &zl, response.as_slice(), Vector2::zeros()) {
            Some((u, _)) => Ok(l * u),
            None => {
                warn!("posterior mode search did not converge; using b = 0");
                Ok(Vector2::zeros())
            }
        }
    }

    /// Log marginal likelihood of this fit on `designs` under `integration`.
    pub fn loglik_on(&self, designs: &[SubjectDesign], integration: Integration) -> Result<f64> {
        marginal_loglik(designs, &self.beta_hat, &self.d_hat, integration)
    }
}
