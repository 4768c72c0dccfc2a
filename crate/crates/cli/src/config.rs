//! Run configuration.
//!
//! Config files are plain text with one `key = value` pair per line. Blank
//! lines and lines starting with `#` are ignored, a trailing `# ...` after a
//! value is a comment, and list values are comma separated. Command-line
//! flags are folded into the same key space and replace file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pbc_core::cohort::CohortSchema;
use pbc_core::glmm::{GlmmSettings, Integration};
use pbc_core::lmm::{LmmSettings, NewIndividualVariance};
use pbc_core::rules::default_alpha_grid;
use pbc_core::sim::GenerativeSpec;
use pbc_core::validation::{ReConvention, ValidationSettings};
use pbc_core::BaselineMode;

use crate::error::CliError;

/// Every key the CLI understands, with a one-line description used by
/// `pbc keys`.
pub const KEYS: &[(&str, &str)] = &[
    ("learning", "learning-sample cohort file"),
    ("test", "test-sample cohort file"),
    ("predictions", "precomputed predicted,observed indicator file (validate only)"),
    ("out", "output directory"),
    ("model", "lmm | glmm (roc also accepts both)"),
    ("thresholds", "cd4 thresholds K, comma separated"),
    ("budgets", "false-positive budgets, comma separated"),
    ("alphas", "alpha grid, comma separated, strictly increasing in (0,1)"),
    ("alpha_step", "alpha grid step; grid is step, 2*step, ... below 1"),
    ("knot_months", "knot of the piecewise-linear time trend"),
    ("baseline_mode", "covariate | response (fit only)"),
    ("integration", "laplace | agq"),
    ("nodes", "quadrature nodes per dimension for agq"),
    ("resubstitution", "population_average | subject_specific"),
    ("variance", "with_re | simple (new-individual prediction variance)"),
    ("replicates", "bootstrap replicates"),
    ("seed", "random seed"),
    ("threads", "worker threads; 0 means all logical cores"),
    ("pct_change", "true to score consecutive-visit relative change (roc, experimental)"),
    ("delimiter", "input field delimiter: a single character or 'tab'"),
    ("col.subject_id", "subject id column name"),
    ("col.time_months", "time column name"),
    ("col.cd4", "cd4 column name"),
    ("col.wbc", "wbc column name"),
    ("col.lymph_pct", "lymphocyte percent column name"),
    ("n_subjects", "simulated cohort size"),
    ("sim.preset", "london | logistic"),
    ("sim.dichotomize", "threshold K for a binary-outcome cohort (logistic preset)"),
    ("sim.sigma2", "residual variance"),
    ("sim.beta", "fixed effects, 12 values"),
    ("sim.d", "random-effect covariance, 4 values row-major"),
];

pub type ConfigMap = BTreeMap<String, String>;

pub fn parse_config(text: &str) -> Result<ConfigMap, CliError> {
    let mut map = ConfigMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Config(format!("line {}: expected key = value", n + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        check_key(k)?;
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key {k}", n + 1)));
        }
    }
    Ok(map)
}

pub fn read_config(path: &Path) -> Result<ConfigMap, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn check_key(k: &str) -> Result<(), CliError> {
    if KEYS.iter().any(|(name, _)| *name == k) {
        Ok(())
    } else {
        Err(CliError::Config(format!("unknown key {k}")))
    }
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64, CliError> {
    let x: f64 = v.trim().parse().map_err(|_| bad(key, format!("not a number: {v}")))?;
    if !x.is_finite() {
        return Err(bad(key, "must be finite"));
    }
    Ok(x)
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_f64(key, s)).collect()
}

fn parse_usize(key: &str, v: &str) -> Result<usize, CliError> {
    v.trim().parse().map_err(|_| bad(key, format!("not a non-negative integer: {v}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, format!("not a boolean: {v}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Lmm,
    Glmm,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimPreset {
    London,
    Logistic,
}

/// Typed view of a merged config map, validated up front.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub learning: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub out: PathBuf,
    pub model: ModelChoice,
    pub thresholds: Vec<f64>,
    pub budgets: Vec<f64>,
    pub alphas: Vec<f64>,
    pub knot_months: f64,
    pub baseline_mode: BaselineMode,
    pub integration: Integration,
    pub resubstitution: ReConvention,
    pub variance: NewIndividualVariance,
    pub replicates: usize,
    pub seed: u64,
    pub threads: usize,
    pub pct_change: bool,
    pub schema: CohortSchema,
    pub n_subjects: usize,
    pub sim_preset: SimPreset,
    pub sim_dichotomize: Option<f64>,
    pub sim_sigma2: Option<f64>,
    pub sim_beta: Option<Vec<f64>>,
    pub sim_d: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self, CliError> {
        let get = |k: &str| map.get(k).map(String::as_str);
        let mut schema = CohortSchema::default();
        for (key, field) in [
            ("col.subject_id", &mut schema.subject_id),
            ("col.time_months", &mut schema.time_months),
            ("col.cd4", &mut schema.cd4),
            ("col.wbc", &mut schema.wbc),
            ("col.lymph_pct", &mut schema.lymph_pct),
        ] {
            if let Some(v) = get(key) {
                *field = v.to_string();
            }
        }
        if let Some(d) = get("delimiter") {
            schema.delimiter = match d {
                "tab" | "\\t" => b'\t',
                s if s.len() == 1 && s.is_ascii() => s.as_bytes()[0],
                _ => return Err(bad("delimiter", "must be a single ASCII character or 'tab'")),
            };
        }

        let alphas = match (get("alphas"), get("alpha_step")) {
            (Some(_), Some(_)) => return Err(bad("alphas", "give either alphas or alpha_step, not both")),
            (Some(v), None) => parse_list("alphas", v)?,
            (None, Some(v)) => {
                let step = parse_f64("alpha_step", v)?;
                if !(step > 0.0 && step < 0.5) {
                    return Err(bad("alpha_step", "must lie in (0, 0.5)"));
                }
                let n = (1.0 / step).ceil() as usize;
                (1..n).map(|k| k as f64 * step).filter(|a| *a < 1.0).collect()
            }
            (None, None) => default_alpha_grid(),
        };

        let integration = match get("integration").unwrap_or("laplace") {
            "laplace" => {
                if get("nodes").is_some_and(|n| n.trim() != "1") {
                    return Err(bad("nodes", "laplace integration uses exactly one node"));
                }
                Integration::laplace()
            }
            "agq" | "adaptive_gh" => {
                Integration::adaptive_gh(get("nodes").map(|v| parse_usize("nodes", v)).transpose()?.unwrap_or(7))
            }
            other => return Err(bad("integration", format!("unknown method {other}"))),
        };

        let cfg = RunConfig {
            learning: get("learning").map(PathBuf::from),
            test: get("test").map(PathBuf::from),
            predictions: get("predictions").map(PathBuf::from),
            out: PathBuf::from(get("out").unwrap_or("pbc-out")),
            model: match get("model").unwrap_or("lmm") {
                "lmm" => ModelChoice::Lmm,
                "glmm" => ModelChoice::Glmm,
                "both" => ModelChoice::Both,
                other => return Err(bad("model", format!("unknown model {other}"))),
            },
            thresholds: get("thresholds")
                .map(|v| parse_list("thresholds", v))
                .transpose()?
                .unwrap_or(vec![200.0, 350.0]),
            budgets: get("budgets").map(|v| parse_list("budgets", v)).transpose()?.unwrap_or(vec![0.05, 0.10]),
            alphas,
            knot_months: get("knot_months").map(|v| parse_f64("knot_months", v)).transpose()?.unwrap_or(1.0),
            baseline_mode: match get("baseline_mode").unwrap_or("covariate") {
                "covariate" => BaselineMode::Covariate,
                "response" => BaselineMode::Response,
                other => return Err(bad("baseline_mode", format!("unknown mode {other}"))),
            },
            integration,
            resubstitution: match get("resubstitution").unwrap_or("population_average") {
                "population_average" => ReConvention::PopulationAverage,
                "subject_specific" => ReConvention::SubjectSpecific,
                other => return Err(bad("resubstitution", format!("unknown convention {other}"))),
            },
            variance: match get("variance").unwrap_or("with_re") {
                "with_re" => NewIndividualVariance::WithRandomEffects,
                "simple" => NewIndividualVariance::Simple,
                other => return Err(bad("variance", format!("unknown form {other}"))),
            },
            replicates: get("replicates").map(|v| parse_usize("replicates", v)).transpose()?.unwrap_or(100),
            seed: get("seed")
                .map(|v| v.trim().parse::<u64>().map_err(|_| bad("seed", format!("not an unsigned integer: {v}"))))
                .transpose()?
                .unwrap_or(1),
            threads: get("threads").map(|v| parse_usize("threads", v)).transpose()?.unwrap_or(0),
            pct_change: get("pct_change").map(|v| parse_bool("pct_change", v)).transpose()?.unwrap_or(false),
            schema,
            n_subjects: get("n_subjects").map(|v| parse_usize("n_subjects", v)).transpose()?.unwrap_or(270),
            sim_preset: match get("sim.preset").unwrap_or("london") {
                "london" => SimPreset::London,
                "logistic" => SimPreset::Logistic,
                other => return Err(bad("sim.preset", format!("unknown preset {other}"))),
            },
            sim_dichotomize: get("sim.dichotomize").map(|v| parse_f64("sim.dichotomize", v)).transpose()?,
            sim_sigma2: get("sim.sigma2").map(|v| parse_f64("sim.sigma2", v)).transpose()?,
            sim_beta: get("sim.beta").map(|v| parse_list("sim.beta", v)).transpose()?,
            sim_d: get("sim.d").map(|v| parse_list("sim.d", v)).transpose()?,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.thresholds.is_empty() {
            return Err(bad("thresholds", "at least one threshold is required"));
        }
        if self.thresholds.iter().any(|k| *k <= 0.0) {
            return Err(bad("thresholds", "must be positive"));
        }
        if self.budgets.is_empty() || self.budgets.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(bad("budgets", "each budget must lie in [0, 1]"));
        }
        if self.alphas.is_empty()
            || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0))
            || self.alphas.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(bad("alphas", "grid must be strictly increasing inside (0, 1)"));
        }
        if self.knot_months.is_nan() || self.knot_months <= 0.0 {
            return Err(bad("knot_months", "must be positive"));
        }
        self.integration.validate().map_err(|e| bad("nodes", e))?;
        if self.n_subjects < 2 {
            return Err(bad("n_subjects", "at least 2 subjects are required"));
        }
        if let Some(b) = &self.sim_beta {
            if b.len() != 12 {
                return Err(bad("sim.beta", format!("expected 12 values, got {}", b.len())));
            }
        }
        if let Some(d) = &self.sim_d {
            if d.len() != 4 {
                return Err(bad("sim.d", format!("expected 4 values, got {}", d.len())));
            }
        }
        if self.sim_dichotomize.is_some_and(|k| k <= 0.0) {
            return Err(bad("sim.dichotomize", "must be positive"));
        }
        Ok(())
    }

    pub fn require_input(&self, key: &str) -> Result<&Path, CliError> {
        let p = match key {
            "learning" => self.learning.as_deref(),
            "test" => self.test.as_deref(),
            "predictions" => self.predictions.as_deref(),
            _ => None,
        }
        .ok_or_else(|| CliError::Config(format!("missing required setting {key}")))?;
        if !p.is_file() {
            return Err(CliError::Config(format!("{key}: no such file {}", p.display())));
        }
        Ok(p)
    }

    pub fn require_replicates(&self) -> Result<(), CliError> {
        if self.replicates < 2 {
            return Err(bad("replicates", "at least 2 bootstrap replicates are required"));
        }
        Ok(())
    }

    pub fn lmm_settings(&self) -> LmmSettings {
        LmmSettings { knot_months: self.knot_months, baseline_mode: self.baseline_mode, ..Default::default() }
    }

    pub fn glmm_settings(&self) -> GlmmSettings {
        GlmmSettings { knot_months: self.knot_months, integration: self.integration, ..Default::default() }
    }

    pub fn validation_settings(&self) -> ValidationSettings {
        ValidationSettings {
            lmm: LmmSettings { baseline_mode: BaselineMode::Covariate, ..self.lmm_settings() },
            glmm: self.glmm_settings(),
            new_individual_variance: self.variance,
            resubstitution: self.resubstitution,
            alphas: self.alphas.clone(),
        }
    }

    pub fn generative_spec(&self) -> GenerativeSpec {
        let mut spec = match self.sim_preset {
            SimPreset::London => GenerativeSpec::london_calibrated(self.seed),
            SimPreset::Logistic => GenerativeSpec::london_logistic(self.seed),
        };
        spec.n_subjects = self.n_subjects;
        spec.knot_months = self.knot_months;
        if let Some(s) = self.sim_sigma2 {
            spec.sigma2_true = s;
        }
        if let Some(b) = &self.sim_beta {
            spec.beta_true = b.clone();
        }
        if let Some(d) = &self.sim_d {
            spec.d_true = [[d[0], d[1]], [d[2], d[3]]];
        }
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar() {
        let m = parse_config("# run\nmodel = glmm\n\nthresholds = 200, 350  # both\n").unwrap();
        assert_eq!(m["model"], "glmm");
        assert_eq!(m["thresholds"], "200, 350");
        let c = RunConfig::from_map(&m).unwrap();
        assert_eq!(c.thresholds, vec![200.0, 350.0]);
        assert_eq!(c.model, ModelChoice::Glmm);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(parse_config("colour = red").is_err());
        assert!(parse_config("seed = 1\nseed = 2").is_err());
        assert!(parse_config("just words").is_err());
    }

    #[test]
    fn validates_numbers() {
        let check = |k: &str, v: &str| {
            let mut m = ConfigMap::new();
            m.insert(k.into(), v.into());
            RunConfig::from_map(&m)
        };
        assert!(check("budgets", "1.5").is_err());
        assert!(check("alphas", "0.2,0.1").is_err());
        assert!(check("knot_months", "0").is_err());
        assert!(check("thresholds", "-3").is_err());
        assert!(check("seed", "x").is_err());
        assert!(check("sim.beta", "1,2").is_err());
        assert!(check("alpha_step", "0.01").unwrap().alphas.len() == 99);
    }

    #[test]
    fn agq_nodes() {
        let m = parse_config("integration = agq\nnodes = 9").unwrap();
        assert_eq!(RunConfig::from_map(&m).unwrap().integration, Integration::adaptive_gh(9));
        let m = parse_config("integration = laplace\nnodes = 9").unwrap();
        assert!(RunConfig::from_map(&m).is_err());
    }
}
