//! Learning/test validation of α-prediction rules and the subject-level
//! bootstrap.
//!
//! Rules are selected on the learning sample and then frozen. Test-sample
//! predictions use only each subject's baseline visit and the time-varying
//! covariates, with random effects set to zero.

use std::fmt::Write as _;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{CohortDataset, Subject};
use crate::design::{build_design, build_design_only, BaselineMode, Outcome};
use crate::error::{PbcError, Result};
use crate::glmm::{fit_glmm, GlmmFit, GlmmSettings};
use crate::lmm::{fit_lmm, LmmFit, LmmSettings, NewIndividualVariance, VarianceMode};
use crate::rules::{
    default_alpha_grid, evaluate_scores, roc_curve, select_point, AlphaRule, RecordScore, RocCurve, RuleEvaluation,
    RuleSource,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Lmm,
    Glmm,
}

impl ModelKind {
    pub fn source(self) -> RuleSource {
        match self {
            ModelKind::Lmm => RuleSource::LmmInterval,
            ModelKind::Glmm => RuleSource::GlmmProb,
        }
    }
}

/// Random effects used when predicting the learning sample itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReConvention {
    /// `b = 0`, the same convention as for new individuals.
    #[default]
    PopulationAverage,
    /// Each subject's predicted random effects given its own responses.
    SubjectSpecific,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSettings {
    pub lmm: LmmSettings,
    pub glmm: GlmmSettings,
    pub new_individual_variance: NewIndividualVariance,
    pub resubstitution: ReConvention,
    pub alphas: Vec<f64>,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        Self {
            lmm: LmmSettings::default(),
            glmm: GlmmSettings::default(),
            new_individual_variance: NewIndividualVariance::default(),
            resubstitution: ReConvention::default(),
            alphas: default_alpha_grid(),
        }
    }
}

impl ValidationSettings {
    fn check(&self) -> Result<()> {
        if self.lmm.baseline_mode != BaselineMode::Covariate || self.glmm.baseline_mode != BaselineMode::Covariate {
            return Err(PbcError::InvalidInput("validation uses baseline cd4 as a covariate".into()));
        }
        if (self.lmm.knot_months - self.glmm.knot_months).abs() > 0.0 {
            return Err(PbcError::InvalidInput("LMM and GLMM knots differ".into()));
        }
        Ok(())
    }
}

/// Model outputs for every post-baseline record of a dataset, in subject
/// order, with the observed cd4 values kept apart for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecords {
    pub scores: Vec<RecordScore>,
    pub cd4: Vec<f64>,
}

impl ScoredRecords {
    pub fn observed_above(&self, k: f64) -> Vec<bool> {
        self.cd4.iter().map(|&c| c > k).collect()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

fn observed_cd4(subject: &Subject) -> impl Iterator<Item = f64> + '_ {
    subject.follow_up().iter().map(|o| o.cd4)
}

/// Normal predictive scores from an LMM fit.
pub fn lmm_scores(
    fit: &LmmFit,
    data: &CohortDataset,
    convention: ReConvention,
    variance: NewIndividualVariance,
) -> Result<ScoredRecords> {
    let mut scores = Vec::with_capacity(data.post_baseline_records());
    let mut cd4 = Vec::with_capacity(data.post_baseline_records());
    for s in data.subjects() {
        match convention {
            ReConvention::PopulationAverage => {
                let design = build_design_only(s, fit.knot_months, fit.baseline_mode)?;
                for r in 0..design.n_rows() {
                    let x: Vec<f64> = design.x.row(r).iter().copied().collect();
                    let z = [design.z[(r, 0)], design.z[(r, 1)]];
                    let p = fit.predict(&x, &z, variance.mode())?;
                    scores.push(RecordScore::Normal { mean: p.mean, sd: p.sd() });
                }
            }
            ReConvention::SubjectSpecific => {
                let (design, y) = build_design(s, fit.knot_months, Outcome::Continuous, fit.baseline_mode)?;
                let blup = fit.blup(&design, &y)?;
                for r in 0..design.n_rows() {
                    let x: Vec<f64> = design.x.row(r).iter().copied().collect();
                    let z = [design.z[(r, 0)], design.z[(r, 1)]];
                    let p = fit.predict(&x, &z, VarianceMode::KnownIndividual(&blup))?;
                    scores.push(RecordScore::Normal { mean: p.mean, sd: p.sd() });
                }
            }
        }
        cd4.extend(observed_cd4(s));
    }
    Ok(ScoredRecords { scores, cd4 })
}

/// Predicted probabilities of lying above the fit's threshold.
pub fn glmm_scores(fit: &GlmmFit, data: &CohortDataset, convention: ReConvention) -> Result<ScoredRecords> {
    let mut scores = Vec::with_capacity(data.post_baseline_records());
    let mut cd4 = Vec::with_capacity(data.post_baseline_records());
    for s in data.subjects() {
        let (design, b) = match convention {
            ReConvention::PopulationAverage => (build_design_only(s, fit.knot_months, fit.baseline_mode)?, [0.0, 0.0]),
            ReConvention::SubjectSpecific => {
                let (design, y) =
                    build_design(s, fit.knot_months, Outcome::Dichotomized(fit.threshold_k), fit.baseline_mode)?;
                let b = fit.posterior_mode_re(&design, &y)?;
                (design, [b[0], b[1]])
            }
        };
        for r in 0..design.n_rows() {
            let x: Vec<f64> = design.x.row(r).iter().copied().collect();
            let theta = fit.predict_theta(&x, &[design.z[(r, 0)], design.z[(r, 1)]], &b)?;
            scores.push(RecordScore::Probability(theta));
        }
        cd4.extend(observed_cd4(s));
    }
    Ok(ScoredRecords { scores, cd4 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub threshold_k: f64,
    pub fp_budget: f64,
    pub rule: AlphaRule,
    pub resubstitution: RuleEvaluation,
    pub test: RuleEvaluation,
    /// Fraction of test records predicted above the threshold.
    pub savings: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub model: ModelKind,
    pub learning_records: usize,
    pub test_records: usize,
    pub entries: Vec<ValidationEntry>,
    /// Learning-sample curves, one per threshold.
    pub learning_roc: Vec<RocCurve>,
    /// Test-sample curves, one per threshold.
    pub test_roc: Vec<RocCurve>,
}

fn check_grid(thresholds: &[f64], budgets: &[f64]) -> Result<()> {
    if thresholds.is_empty() || budgets.is_empty() {
        return Err(PbcError::InvalidInput("at least one threshold and one budget are required".into()));
    }
    if let Some(k) = thresholds.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
        return Err(PbcError::InvalidInput(format!("threshold must be positive, got {k}")));
    }
    if let Some(b) = budgets.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(PbcError::InvalidInput(format!("false-positive budget must lie in [0, 1], got {b}")));
    }
    Ok(())
}

/// Learning and test scores for one threshold.
struct ThresholdScores {
    k: f64,
    learning: ScoredRecords,
    test: ScoredRecords,
}

fn score_all(
    learning: &CohortDataset,
    test: &CohortDataset,
    thresholds: &[f64],
    kind: ModelKind,
    settings: &ValidationSettings,
) -> Result<Vec<ThresholdScores>> {
    match kind {
        ModelKind::Lmm => {
            let fit = fit_lmm(learning, &settings.lmm)?;
            let l = lmm_scores(&fit, learning, settings.resubstitution, settings.new_individual_variance)?;
            let t = lmm_scores(&fit, test, ReConvention::PopulationAverage, settings.new_individual_variance)?;
            Ok(thresholds.iter().map(|&k| ThresholdScores { k, learning: l.clone(), test: t.clone() }).collect())
        }
        ModelKind::Glmm => thresholds
            .iter()
            .map(|&k| {
                let fit = fit_glmm(learning, k, &settings.glmm)?;
                Ok(ThresholdScores {
                    k,
                    learning: glmm_scores(&fit, learning, settings.resubstitution)?,
                    test: glmm_scores(&fit, test, ReConvention::PopulationAverage)?,
                })
            })
            .collect(),
    }
}

/// Fits on `learning`, selects one rule per `(K, budget)` from the learning
/// ROC curve, and applies the frozen rule to `test`.
pub fn run_validation(
    learning: &CohortDataset,
    test: &CohortDataset,
    thresholds: &[f64],
    budgets: &[f64],
    kind: ModelKind,
    settings: &ValidationSettings,
) -> Result<ValidationReport> {
    check_grid(thresholds, budgets)?;
    settings.check()?;
    let scored = score_all(learning, test, thresholds, kind, settings)?;
    let source = kind.source();
    let mut entries = Vec::new();
    let mut learning_roc = Vec::new();
    let mut test_roc = Vec::new();
    let mut test_records = 0;
    let mut learning_records = 0;
    for ts in &scored {
        if ts.test.is_empty() {
            return Err(PbcError::EmptyResponse("test sample has no post-baseline records".into()));
        }
        test_records = ts.test.len();
        learning_records = ts.learning.len();
        let obs_l = ts.learning.observed_above(ts.k);
        let obs_t = ts.test.observed_above(ts.k);
        let curve = roc_curve(&ts.learning.scores, &obs_l, ts.k, source, &settings.alphas)?;
        for &budget in budgets {
            let point = select_point(&curve, budget)?;
            let rule = AlphaRule::new(point.alpha, ts.k, source)?;
            let resub = RuleEvaluation::from_table(rule, point.table);
            let test_eval = evaluate_scores(rule, &ts.test.scores, &obs_t)?;
            entries.push(ValidationEntry {
                threshold_k: ts.k,
                fp_budget: budget,
                rule,
                resubstitution: resub,
                test: test_eval,
                savings: test_eval.savings(),
            });
        }
        match roc_curve(&ts.test.scores, &obs_t, ts.k, source, &settings.alphas) {
            Ok(c) => test_roc.push(c),
            Err(e) => warn!("no test ROC curve at K = {}: {e}", ts.k),
        }
        learning_roc.push(curve);
    }
    Ok(ValidationReport { model: kind, learning_records, test_records, entries, learning_roc, test_roc })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "  -  ".into())
}

impl ValidationReport {
    /// Plain-text summary: one block for the learning sample and one for the
    /// test sample, a row per `(K, budget)`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let model = match self.model {
            ModelKind::Lmm => "linear mixed model, prediction-interval rules",
            ModelKind::Glmm => "logistic mixed model, probability rules",
        };
        let _ = writeln!(out, "Model: {model}");
        for (title, n, pick) in
            [("Learning sample (resubstitution)", self.learning_records, 0), ("Test sample", self.test_records, 1)]
        {
            let _ = writeln!(out, "\n{title}, {n} records");
            let _ = writeln!(
                out,
                "{:>6} {:>7} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}   n11   n12   n21   n22",
                "K", "budget", "alpha", "sens", "spec", "FP", "PPV", "NPV", "saved"
            );
            for e in &self.entries {
                let ev = if pick == 0 { &e.resubstitution } else { &e.test };
                let t = ev.table;
                let _ = writeln!(
                    out,
                    "{:>6} {:>7.3} {:>6.3} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>5} {:>5} {:>5} {:>5}",
                    e.threshold_k,
                    e.fp_budget,
                    e.rule.alpha,
                    fmt_opt(ev.sensitivity),
                    fmt_opt(ev.specificity),
                    fmt_opt(ev.fp_rate),
                    fmt_opt(ev.ppv),
                    fmt_opt(ev.npv),
                    fmt_opt(ev.savings()),
                    t.n11,
                    t.n12,
                    t.n21,
                    t.n22
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub metric: String,
    pub threshold_k: f64,
    pub fp_budget: f64,
    /// Value on the full learning sample.
    pub estimate: Option<f64>,
    /// 5th percentile.
    pub lower: f64,
    /// 95th percentile.
    pub upper: f64,
    /// Replicates contributing a value.
    pub replicates: usize,
    /// Replicates without a value (fit failure or no feasible rule).
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub model: ModelKind,
    pub replicates: usize,
    pub seed: u64,
    pub failed_fits: usize,
    pub intervals: Vec<BootstrapCI>,
}

pub const BOOTSTRAP_METRICS: [&str; 3] = ["sensitivity", "ppv", "npv"];
const MAX_FAILURE_FRACTION: f64 = 0.2;

/// 5th and 95th percentiles: `sorted[⌊0.05(n−1)⌋]` and `sorted[⌈0.95(n−1)⌉]`.
pub fn percentile_interval(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() - 1;
    let lo = (0.05 * n as f64).floor() as usize;
    let hi = ((0.95 * n as f64).ceil() as usize).min(n);
    Some((v[lo], v[hi]))
}

/// `n` subjects drawn with replacement; each slot gets a fresh id so
/// duplicates remain distinct subjects.
pub fn resample_subjects(data: &CohortDataset, seed: u64, replicate: u64) -> Result<CohortDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let subjects = data.subjects();
    let n = subjects.len();
    let drawn = (0..n)
        .map(|slot| {
            let i = rng.random_range(0..n);
            subjects[i].with_id(format!("{}#{slot}", subjects[i].id))
        })
        .collect();
    CohortDataset::new(drawn, data.role)
}

/// Sensitivity, PPV and NPV of a selected rule; `None` where no rule meets
/// the budget.
type SelectedMetrics = Option<[Option<f64>; 3]>;

/// Per `(K, budget)` metrics of the rule selected on `data`, in
/// threshold-major order; `None` where no rule meets the budget.
fn selected_metrics(
    data: &CohortDataset,
    thresholds: &[f64],
    budgets: &[f64],
    kind: ModelKind,
    settings: &ValidationSettings,
) -> Result<Vec<SelectedMetrics>> {
    let scored = score_all(data, data, thresholds, kind, settings)?;
    let mut out = Vec::new();
    for ts in &scored {
        let obs = ts.learning.observed_above(ts.k);
        let curve = roc_curve(&ts.learning.scores, &obs, ts.k, kind.source(), &settings.alphas)?;
        for &b in budgets {
            out.push(select_point(&curve, b).ok().map(|p| [Some(p.sensitivity), p.ppv, p.npv]));
        }
    }
    Ok(out)
}

/// Subject-level bootstrap of the selected rules' sensitivity, PPV and NPV.
/// Each replicate refits the model and reselects the rule. Replicate `r`
/// draws from its own stream of the seeded generator, so results do not
/// depend on scheduling.
pub fn bootstrap_grid(
    learning: &CohortDataset,
    thresholds: &[f64],
    budgets: &[f64],
    replicates: usize,
    seed: u64,
    kind: ModelKind,
    settings: &ValidationSettings,
) -> Result<BootstrapSummary> {
    check_grid(thresholds, budgets)?;
    settings.check()?;
    if replicates < 2 {
        return Err(PbcError::InvalidInput(format!("at least 2 bootstrap replicates are required, got {replicates}")));
    }
    let full = selected_metrics(learning, thresholds, budgets, kind, settings)?;
    let results: Vec<Result<Vec<SelectedMetrics>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let sample = resample_subjects(learning, seed, r as u64)?;
            selected_metrics(&sample, thresholds, budgets, kind, settings)
        })
        .collect();
    let mut failed_fits = 0;
    let mut ok = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) => ok.push(v),
            Err(e) => {
                warn!("bootstrap replicate {r} failed: {e}");
                failed_fits += 1;
            }
        }
    }
    if failed_fits as f64 > MAX_FAILURE_FRACTION * replicates as f64 {
        return Err(PbcError::BootstrapFailures { failed: failed_fits, total: replicates });
    }
    info!("bootstrap: {} of {replicates} replicates completed", ok.len());

    let mut intervals = Vec::new();
    let mut idx = 0;
    for &k in thresholds {
        for &b in budgets {
            for (m, name) in BOOTSTRAP_METRICS.iter().enumerate() {
                let values: Vec<f64> = ok.iter().filter_map(|v| v[idx].and_then(|x| x[m])).collect();
                let Some((lower, upper)) = percentile_interval(&values) else {
                    warn!("no bootstrap values for {name} at K = {k}, budget {b}");
                    continue;
                };
                intervals.push(BootstrapCI {
                    metric: name.to_string(),
                    threshold_k: k,
                    fp_budget: b,
                    estimate: full[idx].and_then(|x| x[m]),
                    lower,
                    upper,
                    replicates: values.len(),
                    failed: replicates - values.len(),
                });
            }
            idx += 1;
        }
    }
    Ok(BootstrapSummary { model: kind, replicates, seed, failed_fits, intervals })
}

/// Single `(K, budget)` form of [`bootstrap_grid`] for the LMM rules.
pub fn bootstrap_ci(
    learning: &CohortDataset,
    threshold_k: f64,
    fp_budget: f64,
    replicates: usize,
    seed: u64,
    settings: &ValidationSettings,
) -> Result<Vec<BootstrapCI>> {
    bootstrap_grid(learning, &[threshold_k], &[fp_budget], replicates, seed, ModelKind::Lmm, settings)
        .map(|s| s.intervals)
}

impl BootstrapSummary {
    /// Rows per `(K, budget)` with `estimate (lower, upper)` for each metric.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Bootstrap: {} replicates, seed {}, {} failed fits; 5th and 95th percentiles",
            self.replicates, self.seed, self.failed_fits
        );
        let _ = write!(out, "{:>6} {:>7}", "K", "budget");
        for m in BOOTSTRAP_METRICS {
            let _ = write!(out, "  {m:<20}");
        }
        out.push('\n');
        let mut keys: Vec<(f64, f64)> = Vec::new();
        for ci in &self.intervals {
            if !keys.contains(&(ci.threshold_k, ci.fp_budget)) {
                keys.push((ci.threshold_k, ci.fp_budget));
            }
        }
        for (k, b) in keys {
            let _ = write!(out, "{k:>6} {b:>7.3}");
            for m in BOOTSTRAP_METRICS {
                let cell = self
                    .intervals
                    .iter()
                    .find(|c| c.threshold_k == k && c.fp_budget == b && c.metric == m)
                    .map(|c| {
                        format!(
                            "{} ({:.2}, {:.2})",
                            c.estimate.map(|e| format!("{e:.2}")).unwrap_or("-".into()),
                            c.lower,
                            c.upper
                        )
                    })
                    .unwrap_or_else(|| "-".into());
                let _ = write!(out, "  {cell:<20}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::ConfusionTable;
    use crate::sim::{simulate, GenerativeSpec};

    fn cohort(n: usize, seed: u64) -> CohortDataset {
        simulate(&GenerativeSpec { n_subjects: n, ..GenerativeSpec::london_calibrated(seed) }).unwrap().dataset
    }

    #[test]
    fn savings_from_published_test_counts() {
        let t = ConfusionTable::new(238, 2, 44, 43);
        assert!((t.savings().unwrap() - 0.7339).abs() < 1e-4);
    }

    #[test]
    fn test_predictions_ignore_follow_up_responses() {
        let learning = cohort(60, 1);
        let test = cohort(30, 2);
        let fit = fit_lmm(&learning, &LmmSettings::default()).unwrap();
        let a =
            lmm_scores(&fit, &test, ReConvention::PopulationAverage, NewIndividualVariance::WithRandomEffects).unwrap();
        let scrambled = CohortDataset::new(
            test.subjects().iter().map(|s| s.map_follow_up_cd4(|j, _| 1.0 + 97.0 * j as f64).unwrap()).collect(),
            test.role,
        )
        .unwrap();
        let b = lmm_scores(&fit, &scrambled, ReConvention::PopulationAverage, NewIndividualVariance::WithRandomEffects)
            .unwrap();
        assert_eq!(a.scores, b.scores);
        assert_ne!(a.cd4, b.cd4);
    }

    #[test]
    fn test_equal_to_learning_reproduces_resubstitution() {
        let learning = cohort(80, 3);
        let report = run_validation(
            &learning,
            &learning,
            &[200.0, 350.0],
            &[0.05, 0.10],
            ModelKind::Lmm,
            &ValidationSettings::default(),
        )
        .unwrap();
        assert_eq!(report.entries.len(), 4);
        for e in &report.entries {
            assert_eq!(e.resubstitution.table, e.test.table);
            assert!(e.resubstitution.fp_rate.unwrap() <= e.fp_budget);
            let s = e.savings.unwrap();
            let confirm = e.test.table.n2_dot() as f64 / e.test.table.total() as f64;
            assert_eq!(s + confirm, 1.0);
        }
        let text = report.to_text();
        assert!(text.contains("Test sample") && text.contains("Learning sample"));
    }

    #[test]
    fn percentile_edge_cases() {
        assert_eq!(percentile_interval(&[3.0, 1.0]), Some((1.0, 3.0)));
        assert_eq!(percentile_interval(&[2.0]), Some((2.0, 2.0)));
        assert_eq!(percentile_interval(&[]), None);
        let v: Vec<f64> = (0..101).map(|i| i as f64).collect();
        assert_eq!(percentile_interval(&v), Some((5.0, 95.0)));
    }

    #[test]
    fn resamples_have_n_whole_subjects() {
        let data = cohort(25, 4);
        let s = resample_subjects(&data, 9, 3).unwrap();
        assert_eq!(s.n_subjects(), 25);
        for sub in s.subjects() {
            let orig = sub.id.split('#').next().unwrap();
            let src = data.subjects().iter().find(|x| x.id == orig).unwrap();
            assert_eq!(src.observations(), sub.observations());
        }
        assert_eq!(resample_subjects(&data, 9, 3).unwrap().subjects(), s.subjects());
        assert_ne!(resample_subjects(&data, 9, 4).unwrap().subjects(), s.subjects());
    }

    #[test]
    fn two_replicates_give_min_and_max() {
        let data = cohort(50, 5);
        let settings = ValidationSettings::default();
        let cis = bootstrap_ci(&data, 350.0, 0.10, 2, 11, &settings).unwrap();
        assert_eq!(cis.len(), 3);
        let mut vals = Vec::new();
        for r in 0..2 {
            let sample = resample_subjects(&data, 11, r).unwrap();
            let m = selected_metrics(&sample, &[350.0], &[0.10], ModelKind::Lmm, &settings).unwrap();
            vals.push(m[0].unwrap()[0].unwrap());
        }
        let sens = cis.iter().find(|c| c.metric == "sensitivity").unwrap();
        assert_eq!(sens.lower, vals[0].min(vals[1]));
        assert_eq!(sens.upper, vals[0].max(vals[1]));
        assert_eq!(bootstrap_ci(&data, 350.0, 0.10, 2, 11, &settings).unwrap(), cis);
        assert!(bootstrap_ci(&data, 350.0, 0.10, 1, 11, &settings).is_err());
    }
}
