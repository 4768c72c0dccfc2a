//! JSON model artifacts.
//!
//! An artifact is a single JSON object tagged by `kind` (`"lmm"` or
//! `"glmm"`). Matrices are stored as `{rows, cols, data}` with `data` in
//! row-major order; numbers are written with the shortest decimal that
//! round-trips exactly, so loading an artifact reproduces the fit bit for
//! bit. Field order is fixed, so writing the same fit twice gives identical
//! bytes.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::design::BaselineMode;
use crate::error::{PbcError, Result};
use crate::glmm::{GlmmFit, Integration};
use crate::lmm::LmmFit;

pub const FORMAT_VERSION: u32 = 1;

/// Dense matrix stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMajor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RowMajor {
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).flat_map(|r| m.row(r).iter().copied().collect::<Vec<_>>()).collect();
        RowMajor { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn from_matrix2(m: &Matrix2<f64>) -> Self {
        RowMajor { rows: 2, cols: 2, data: vec![m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]] }
    }

    pub fn to_dmatrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(PbcError::LengthMismatch { expected: self.rows * self.cols, actual: self.data.len() });
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }

    pub fn to_matrix2(&self) -> Result<Matrix2<f64>> {
        if self.rows != 2 || self.cols != 2 || self.data.len() != 4 {
            return Err(PbcError::Schema(format!("expected a 2x2 matrix, got {}x{}", self.rows, self.cols)));
        }
        Ok(Matrix2::from_row_slice(&self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmArtifact {
    pub format_version: u32,
    pub knot_months: f64,
    pub baseline_mode: BaselineMode,
    pub column_names: Vec<String>,
    pub n_subjects: usize,
    pub n_observations: usize,
    pub beta_hat: Vec<f64>,
    pub d_hat: RowMajor,
    pub sigma2_hat: f64,
    pub var_beta_hat: RowMajor,
    pub reml_loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmmArtifact {
    pub format_version: u32,
    pub threshold_k: f64,
    pub knot_months: f64,
    pub baseline_mode: BaselineMode,
    pub column_names: Vec<String>,
    pub n_subjects: usize,
    pub n_observations: usize,
    pub integration: Integration,
    pub beta_hat: Vec<f64>,
    pub d_hat: RowMajor,
    pub marginal_loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelArtifact {
    Lmm(LmmArtifact),
    Glmm(GlmmArtifact),
}

impl From<&LmmFit> for ModelArtifact {
    fn from(fit: &LmmFit) -> Self {
        ModelArtifact::Lmm(LmmArtifact {
            format_version: FORMAT_VERSION,
            knot_months: fit.knot_months,
            baseline_mode: fit.baseline_mode,
            column_names: fit.column_names.clone(),
            n_subjects: fit.n_subjects,
            n_observations: fit.n_observations,
            beta_hat: fit.beta_hat.as_slice().to_vec(),
            d_hat: RowMajor::from_matrix2(&fit.d_hat),
            sigma2_hat: fit.sigma2_hat,
            var_beta_hat: RowMajor::from_dmatrix(&fit.var_beta_hat),
            reml_loglik: fit.reml_loglik,
            converged: fit.converged,
            iterations: fit.iterations,
        })
    }
}

impl From<&GlmmFit> for ModelArtifact {
    fn from(fit: &GlmmFit) -> Self {
        ModelArtifact::Glmm(GlmmArtifact {
            format_version: FORMAT_VERSION,
            threshold_k: fit.threshold_k,
            knot_months: fit.knot_months,
            baseline_mode: fit.baseline_mode,
            column_names: fit.column_names.clone(),
            n_subjects: fit.n_subjects,
            n_observations: fit.n_observations,
            integration: fit.integration,
            beta_hat: fit.beta_hat.as_slice().to_vec(),
            d_hat: RowMajor::from_matrix2(&fit.d_hat),
            marginal_loglik: fit.marginal_loglik,
            converged: fit.converged,
            iterations: fit.iterations,
        })
    }
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(PbcError::Schema(format!("unsupported artifact format_version {v}")));
    }
    Ok(())
}

impl ModelArtifact {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelArtifact::Lmm(_) => "lmm",
            ModelArtifact::Glmm(_) => "glmm",
        }
    }

    /// Rebuilds the fit. The REML trace is not stored.
    pub fn to_lmm(&self) -> Result<LmmFit> {
        let ModelArtifact::Lmm(a) = self else {
            return Err(PbcError::Schema(format!("expected an lmm artifact, found {}", self.kind())));
        };
        check_version(a.format_version)?;
        let var_beta_hat = a.var_beta_hat.to_dmatrix()?;
        if var_beta_hat.nrows() != a.beta_hat.len() || var_beta_hat.ncols() != a.beta_hat.len() {
            return Err(PbcError::Schema("var_beta_hat does not match beta_hat".into()));
        }
        Ok(LmmFit {
            beta_hat: DVector::from_vec(a.beta_hat.clone()),
            d_hat: a.d_hat.to_matrix2()?,
            sigma2_hat: a.sigma2_hat,
            var_beta_hat,
            reml_loglik: a.reml_loglik,
            converged: a.converged,
            iterations: a.iterations,
            knot_months: a.knot_months,
            baseline_mode: a.baseline_mode,
            column_names: a.column_names.clone(),
            n_subjects: a.n_subjects,
            n_observations: a.n_observations,
            reml_trace: Vec::new(),
        })
    }

    pub fn to_glmm(&self) -> Result<GlmmFit> {
        let ModelArtifact::Glmm(a) = self else {
            return Err(PbcError::Schema(format!("expected a glmm artifact, found {}", self.kind())));
        };
        check_version(a.format_version)?;
        a.integration.validate()?;
        Ok(GlmmFit {
            beta_hat: DVector::from_vec(a.beta_hat.clone()),
            d_hat: a.d_hat.to_matrix2()?,
            marginal_loglik: a.marginal_loglik,
            integration: a.integration,
            converged: a.converged,
            iterations: a.iterations,
            threshold_k: a.threshold_k,
            knot_months: a.knot_months,
            baseline_mode: a.baseline_mode,
            column_names: a.column_names.clone(),
            n_subjects: a.n_subjects,
            n_observations: a.n_observations,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_all, Outcome};
    use crate::glmm::{fit_glmm, GlmmSettings};
    use crate::lmm::{fit_with_variances, LmmSettings};
    use crate::sim::{simulate, GenerativeSpec};

    #[test]
    fn row_major_layout() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let r = RowMajor::from_dmatrix(&m);
        assert_eq!(r.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(r.to_dmatrix().unwrap(), m);
    }

    #[test]
    fn lmm_round_trip_is_exact() {
        let sim = simulate(&GenerativeSpec { n_subjects: 12, ..GenerativeSpec::london_calibrated(3) }).unwrap();
        let designs = build_all(sim.dataset.subjects(), 1.0, Outcome::Continuous, BaselineMode::Covariate).unwrap();
        let fit =
            fit_with_variances(&designs, Matrix2::new(1e4 / 3.0, -0.1, -0.1, 7.0), 3600.1, &LmmSettings::default())
                .unwrap();
        let art = ModelArtifact::from(&fit);
        let json = art.to_json().unwrap();
        assert!(json.contains("\"kind\": \"lmm\""));
        let back = ModelArtifact::from_json(&json).unwrap();
        assert_eq!(back, art);
        let refit = back.to_lmm().unwrap();
        assert_eq!(refit.beta_hat, fit.beta_hat);
        assert_eq!(refit.var_beta_hat, fit.var_beta_hat);
        assert_eq!(refit.d_hat, fit.d_hat);
        assert_eq!(back.to_json().unwrap(), json);
        assert!(back.to_glmm().is_err());
    }

    #[test]
    fn glmm_tagged_with_threshold() {
        let sim = simulate(&GenerativeSpec { n_subjects: 40, ..GenerativeSpec::london_calibrated(3) }).unwrap();
        let settings = GlmmSettings { fix_d_zero: true, ..Default::default() };
        let fit = fit_glmm(&sim.dataset, 200.0, &settings).unwrap();
        let json = ModelArtifact::from(&fit).to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["kind"], "glmm");
        assert_eq!(v["threshold_k"], 200.0);
        let back = ModelArtifact::from_json(&json).unwrap().to_glmm().unwrap();
        assert_eq!(back.beta_hat, fit.beta_hat);
    }

    #[test]
    fn rejects_unknown_version() {
        let m = ModelArtifact::Lmm(LmmArtifact {
            format_version: 99,
            knot_months: 1.0,
            baseline_mode: BaselineMode::Covariate,
            column_names: vec![],
            n_subjects: 0,
            n_observations: 0,
            beta_hat: vec![],
            d_hat: RowMajor::from_matrix2(&Matrix2::identity()),
            sigma2_hat: 1.0,
            var_beta_hat: RowMajor { rows: 0, cols: 0, data: vec![] },
            reml_loglik: 0.0,
            converged: true,
            iterations: 0,
        });
        assert!(matches!(m.to_lmm(), Err(PbcError::Schema(_))));
    }
}
