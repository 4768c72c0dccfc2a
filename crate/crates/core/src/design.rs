//! Fixed- and random-effects design matrices for the piecewise-linear
//! trajectory model with a single knot.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cohort::{Observation, Subject};
use crate::error::{PbcError, Result};

pub const DEFAULT_KNOT_MONTHS: f64 = 1.0;

/// Fixed-effect columns when baseline cd4 enters as a covariate.
pub const FIXED_COLUMNS: [&str; 12] = [
    "intercept",
    "log10_cd4_baseline",
    "wbc_baseline",
    "lymph_baseline",
    "time",
    "time_after_knot",
    "wbc",
    "lymph",
    "time_x_wbc_baseline",
    "time_x_lymph_baseline",
    "time_after_knot_x_wbc_baseline",
    "time_after_knot_x_lymph_baseline",
];

pub const RANDOM_COLUMNS: [&str; 2] = ["intercept", "time"];

/// How the baseline cd4 value is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// log₁₀ baseline cd4 is a fixed-effect covariate; the response is the
    /// follow-up visits only.
    #[default]
    Covariate,
    /// Baseline cd4 is the first response element and its column is dropped
    /// from the fixed-effects design.
    Response,
}

impl BaselineMode {
    pub fn column_names(self) -> Vec<&'static str> {
        match self {
            BaselineMode::Covariate => FIXED_COLUMNS.to_vec(),
            BaselineMode::Response => FIXED_COLUMNS.iter().copied().filter(|c| *c != "log10_cd4_baseline").collect(),
        }
    }

    pub fn n_fixed(self) -> usize {
        match self {
            BaselineMode::Covariate => 12,
            BaselineMode::Response => 11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Continuous,
    /// Indicator `cd4 > K`.
    Dichotomized(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignPair {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub knot_months: f64,
}

impl DesignPair {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }
}

#[inline]
pub fn hinge(t: f64, knot: f64) -> f64 {
    (t - knot).max(0.0)
}

/// Fixed-effect row for one visit given the subject's baseline visit.
pub fn fixed_row(baseline: &Observation, visit: &Observation, knot: f64, mode: BaselineMode) -> Vec<f64> {
    let t = visit.time_months;
    let h = hinge(t, knot);
    let (w0, l0) = (baseline.wbc, baseline.lymph_pct);
    let mut row = Vec::with_capacity(12);
    row.push(1.0);
    if mode == BaselineMode::Covariate {
        row.push(baseline.cd4.log10());
    }
    row.extend_from_slice(&[w0, l0, t, h, visit.wbc, visit.lymph_pct, t * w0, t * l0, h * w0, h * l0]);
    row
}

pub fn random_row(visit: &Observation) -> [f64; 2] {
    [1.0, visit.time_months]
}

fn check_knot(knot: f64) -> Result<()> {
    if knot.is_finite() && knot > 0.0 {
        Ok(())
    } else {
        Err(PbcError::InvalidInput(format!("knot_months must be > 0, got {knot}")))
    }
}

/// Rows used for a subject: follow-up visits in covariate mode, every visit
/// in response mode.
pub fn modeled_visits(subject: &Subject, mode: BaselineMode) -> &[Observation] {
    match mode {
        BaselineMode::Covariate => subject.follow_up(),
        BaselineMode::Response => subject.observations(),
    }
}

/// Design matrices only. Reads the baseline cd4 and the covariates but never
/// a follow-up cd4 value.
pub fn build_design_only(subject: &Subject, knot_months: f64, mode: BaselineMode) -> Result<DesignPair> {
    check_knot(knot_months)?;
    let visits = modeled_visits(subject, mode);
    if visits.is_empty() {
        return Err(PbcError::EmptyResponse(subject.id.clone()));
    }
    let base = subject.baseline();
    let p = mode.n_fixed();
    let mut x = DMatrix::zeros(visits.len(), p);
    let mut z = DMatrix::zeros(visits.len(), 2);
    for (r, v) in visits.iter().enumerate() {
        for (c, val) in fixed_row(base, v, knot_months, mode).into_iter().enumerate() {
            x[(r, c)] = val;
        }
        let zr = random_row(v);
        z[(r, 0)] = zr[0];
        z[(r, 1)] = zr[1];
    }
    Ok(DesignPair { x, z, knot_months })
}

/// Design matrices and response vector for one subject.
pub fn build_design(
    subject: &Subject,
    knot_months: f64,
    outcome: Outcome,
    mode: BaselineMode,
) -> Result<(DesignPair, DVector<f64>)> {
    let design = build_design_only(subject, knot_months, mode)?;
    let visits = modeled_visits(subject, mode);
    let response = DVector::from_iterator(
        visits.len(),
        visits.iter().map(|v| match outcome {
            Outcome::Continuous => v.cd4,
            Outcome::Dichotomized(k) => {
                if v.cd4 > k {
                    1.0
                } else {
                    0.0
                }
            }
        }),
    );
    Ok((design, response))
}

/// Per-subject design and response for every subject in a dataset.
#[derive(Debug, Clone)]
pub struct SubjectDesign {
    pub id: String,
    pub design: DesignPair,
    pub response: DVector<f64>,
}

pub fn build_all(
    subjects: &[Subject],
    knot_months: f64,
    outcome: Outcome,
    mode: BaselineMode,
) -> Result<Vec<SubjectDesign>> {
    subjects
        .iter()
        .map(|s| {
            let (design, response) = build_design(s, knot_months, outcome, mode)?;
            Ok(SubjectDesign { id: s.id.clone(), design, response })
        })
        .collect()
}
