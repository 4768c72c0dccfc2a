//! Prediction-based classification for longitudinal biomarkers.
//!
//! Mixed-effects models are fitted to unevenly spaced repeated measures and
//! turned into threshold classification rules (α-prediction rules) driven by
//! either a predicted probability or the lower bound of a one-sided
//! prediction interval. Rules are evaluated through ROC analysis,
//! resubstitution, an independent test sample and a subject-level bootstrap.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod cohort;
pub mod design;
pub mod error;
pub mod extensions;
pub mod glmm;
pub mod linalg;
pub mod lmm;
pub mod normal;
pub mod optim;
pub mod quadrature;
pub mod rules;
pub mod sim;
pub mod validation;

pub use artifact::ModelArtifact;
pub use cohort::{load_cohort, read_cohort, CohortDataset, CohortSchema, DatasetRole, Observation, Subject};
pub use design::{build_design, BaselineMode, DesignPair, Outcome, SubjectDesign};
pub use error::{PbcError, Result};
pub use glmm::{fit_glmm, GlmmFit, GlmmSettings, Integration, IntegrationMethod};
pub use lmm::{fit_lmm, BlupResult, LmmFit, LmmSettings, VarianceMode};
pub use rules::{AlphaRule, ConfusionTable, RecordScore, RocCurve, RocPoint, RuleEvaluation, RuleSource};
pub use sim::{simulate, GenerativeSpec, SimulatedCohort};
pub use validation::{
    bootstrap_ci, bootstrap_grid, run_validation, BootstrapCI, ModelKind, ValidationReport, ValidationSettings,
};
