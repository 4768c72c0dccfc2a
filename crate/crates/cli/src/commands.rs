use std::fmt::Write as _;
use std::path::Path;

use log::info;
use pbc_core::artifact::ModelArtifact;
use pbc_core::cohort::{load_cohort, CohortDataset, DatasetRole};
use pbc_core::extensions::pct_change_scores;
use pbc_core::glmm::fit_glmm;
use pbc_core::lmm::fit_lmm;
use pbc_core::rules::{roc_curve, roc_svg, ConfusionTable, RecordScore, RocCurve, RuleSource};
use pbc_core::sim::{simulate, simulate_dichotomous};
use pbc_core::validation::{
    bootstrap_grid, glmm_scores, lmm_scores, run_validation, ModelKind, ReConvention, ScoredRecords,
};
use pbc_core::PbcError;
use serde::Serialize;

use crate::config::{ConfigMap, ModelChoice, RunConfig};
use crate::error::CliError;
use crate::manifest::{hash_file, FileHash, Manifest, Outputs};

pub const COMMANDS: [&str; 5] = ["simulate", "fit", "validate", "roc", "bootstrap"];

/// Text for the terminal and the manifest of the files written.
pub struct RunOutcome {
    pub summary: String,
    pub manifest: Manifest,
}

pub fn run(command: &str, map: &ConfigMap) -> Result<RunOutcome, CliError> {
    let cfg = RunConfig::from_map(map)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    pool.install(|| {
        let mut out = Outputs::create(&cfg.out)?;
        let mut inputs = Vec::new();
        let summary = match command {
            "simulate" => simulate_cmd(&cfg, &mut out)?,
            "fit" => fit_cmd(&cfg, &mut out, &mut inputs)?,
            "validate" => validate_cmd(&cfg, &mut out, &mut inputs)?,
            "roc" => roc_cmd(&cfg, &mut out, &mut inputs)?,
            "bootstrap" => bootstrap_cmd(&cfg, &mut out, &mut inputs)?,
            other => return Err(CliError::Config(format!("unknown command {other}"))),
        };
        let manifest = out.finish(command, cfg.seed, map, inputs)?;
        Ok(RunOutcome { summary, manifest })
    })
}

fn load(cfg: &RunConfig, key: &str, role: DatasetRole, inputs: &mut Vec<FileHash>) -> Result<CohortDataset, CliError> {
    let path = cfg.require_input(key)?;
    inputs.push(hash_file(path)?);
    Ok(load_cohort(path, &cfg.schema, role)?)
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(PbcError::from)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// `200` for whole numbers, `0p25` otherwise, for use in file names.
fn k_label(k: f64) -> String {
    if k.fract() == 0.0 && k.abs() < 1e15 {
        format!("{}", k as i64)
    } else {
        k.to_string().replace('.', "p")
    }
}

fn single_model(cfg: &RunConfig) -> Result<ModelKind, CliError> {
    match cfg.model {
        ModelChoice::Lmm => Ok(ModelKind::Lmm),
        ModelChoice::Glmm => Ok(ModelKind::Glmm),
        ModelChoice::Both => Err(CliError::Config("model: 'both' is only valid for roc".into())),
    }
}

fn curve_csv(curve: &RocCurve) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    curve.write_csv(&mut buf)?;
    Ok(buf)
}

fn simulate_cmd(cfg: &RunConfig, out: &mut Outputs) -> Result<String, CliError> {
    let spec = cfg.generative_spec();
    let sim = match cfg.sim_dichotomize {
        Some(k) => simulate_dichotomous(&spec, k)?,
        None => simulate(&spec)?,
    };
    let mut cohort = Vec::new();
    sim.dataset.write_csv(&mut cohort)?;
    out.write("cohort.csv", &cohort)?;
    let mut truth = Vec::new();
    sim.write_truth_csv(&mut truth)?;
    out.write("truth.csv", &truth)?;
    out.write("spec.json", &to_json(&spec)?)?;
    Ok(format!(
        "simulated {} subjects, {} records ({} post-baseline), {} draws floored",
        sim.dataset.n_subjects(),
        sim.dataset.total_records(),
        sim.dataset.post_baseline_records(),
        sim.floored
    ))
}

fn fit_cmd(cfg: &RunConfig, out: &mut Outputs, inputs: &mut Vec<FileHash>) -> Result<String, CliError> {
    let data = load(cfg, "learning", DatasetRole::Learning, inputs)?;
    let mut summary = String::new();
    match single_model(cfg)? {
        ModelKind::Lmm => {
            let fit = fit_lmm(&data, &cfg.lmm_settings())?;
            out.write("model.json", ModelArtifact::from(&fit).to_json()?.as_bytes())?;
            let _ = writeln!(
                summary,
                "lmm: {} subjects, {} records, REML log-likelihood {:.4}, sigma2 {:.4}, {} iterations",
                fit.n_subjects, fit.n_observations, fit.reml_loglik, fit.sigma2_hat, fit.iterations
            );
        }
        ModelKind::Glmm => {
            if cfg.baseline_mode != pbc_core::BaselineMode::Covariate {
                return Err(CliError::Config(
                    "baseline_mode: the logistic model uses baseline cd4 as a covariate".into(),
                ));
            }
            for &k in &cfg.thresholds {
                let fit = fit_glmm(&data, k, &cfg.glmm_settings())?;
                let name = format!("model_k{}.json", k_label(k));
                out.write(&name, ModelArtifact::from(&fit).to_json()?.as_bytes())?;
                let _ = writeln!(
                    summary,
                    "glmm K={k}: {} subjects, {} records, log-likelihood {:.4}, {} iterations -> {name}",
                    fit.n_subjects, fit.n_observations, fit.marginal_loglik, fit.iterations
                );
            }
        }
    }
    Ok(summary.trim_end().to_string())
}

#[derive(Debug, Serialize)]
struct FixtureReport {
    table: ConfusionTable,
    sensitivity: Option<f64>,
    specificity: Option<f64>,
    fp_rate: Option<f64>,
    ppv: Option<f64>,
    npv: Option<f64>,
    savings: Option<f64>,
}

fn read_predictions(path: &Path) -> Result<(Vec<bool>, Vec<bool>), CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(PbcError::from)?;
    let headers = rdr.headers().map_err(PbcError::from)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| PbcError::Schema(format!("predictions file lacks column {name}")))
    };
    let (ip, io) = (col("predicted")?, col("observed")?);
    let flag = |s: &str, row: usize| match s.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(PbcError::Record { row, message: format!("expected 0 or 1, got {other:?}") }),
    };
    let (mut pred, mut obs) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(PbcError::from)?;
        pred.push(flag(rec.get(ip).unwrap_or(""), i + 1)?);
        obs.push(flag(rec.get(io).unwrap_or(""), i + 1)?);
    }
    Ok((pred, obs))
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "undefined".into())
}

fn validate_predictions(cfg: &RunConfig, out: &mut Outputs, inputs: &mut Vec<FileHash>) -> Result<String, CliError> {
    let path = cfg.require_input("predictions")?;
    inputs.push(hash_file(path)?);
    let (pred, obs) = read_predictions(path)?;
    let t = ConfusionTable::from_predictions(&pred, &obs)?;
    let report = FixtureReport {
        table: t,
        sensitivity: t.sensitivity(),
        specificity: t.specificity(),
        fp_rate: t.fp_rate(),
        ppv: t.ppv(),
        npv: t.npv(),
        savings: t.savings(),
    };
    let mut text = format!("n11 {}  n12 {}  n21 {}  n22 {}\n", t.n11, t.n12, t.n21, t.n22);
    for (name, v) in [
        ("sensitivity", report.sensitivity),
        ("specificity", report.specificity),
        ("fp_rate", report.fp_rate),
        ("ppv", report.ppv),
        ("npv", report.npv),
        ("savings", report.savings),
    ] {
        let _ = writeln!(text, "{name} {}", fmt_metric(v));
    }
    out.write("report.json", &to_json(&report)?)?;
    out.write("report.txt", text.as_bytes())?;
    Ok(text.trim_end().to_string())
}

fn validate_cmd(cfg: &RunConfig, out: &mut Outputs, inputs: &mut Vec<FileHash>) -> Result<String, CliError> {
    if cfg.predictions.is_some() {
        return validate_predictions(cfg, out, inputs);
    }
    let kind = single_model(cfg)?;
    // Check both paths before any fitting.
    cfg.require_input("learning")?;
    cfg.require_input("test")?;
    let learning = load(cfg, "learning", DatasetRole::Learning, inputs)?;
    let test = load(cfg, "test", DatasetRole::Test, inputs)?;
    let report = run_validation(&learning, &test, &cfg.thresholds, &cfg.budgets, kind, &cfg.validation_settings())?;
    let text = report.to_text();
    out.write("report.json", &to_json(&report)?)?;
    out.write("report.txt", text.as_bytes())?;
    for curve in &report.learning_roc {
        let k = k_label(curve.threshold_k);
        out.write(&format!("roc_learning_k{k}.csv"), &curve_csv(curve)?)?;
        let mut labelled = vec![("learning", curve)];
        if let Some(t) = report.test_roc.iter().find(|t| t.threshold_k == curve.threshold_k) {
            out.write(&format!("roc_test_k{k}.csv"), &curve_csv(t)?)?;
            labelled.push(("test", t));
        }
        out.write(&format!("roc_k{k}.svg"), roc_svg(&labelled).as_bytes())?;
    }
    Ok(text.trim_end().to_string())
}

fn model_scores(
    kind: ModelKind,
    learning: &CohortDataset,
    eval: Option<&CohortDataset>,
    k: f64,
    cfg: &RunConfig,
) -> Result<ScoredRecords, CliError> {
    let settings = cfg.validation_settings();
    let (data, convention) = match eval {
        Some(t) => (t, ReConvention::PopulationAverage),
        None => (learning, cfg.resubstitution),
    };
    Ok(match kind {
        ModelKind::Lmm => lmm_scores(&fit_lmm(learning, &settings.lmm)?, data, convention, cfg.variance)?,
        ModelKind::Glmm => glmm_scores(&fit_glmm(learning, k, &settings.glmm)?, data, convention)?,
    })
}

fn curve_summary(text: &mut String, label: &str, curve: &RocCurve, budgets: &[f64]) {
    let _ = write!(text, "{label:<6} K={:<6} AUC {:.4}", curve.threshold_k, curve.auc());
    for &b in budgets {
        let s = curve.sensitivity_at(b).map(|s| format!("{s:.3}")).unwrap_or_else(|| "-".into());
        let _ = write!(text, "  sens@{b}: {s}");
    }
    text.push('\n');
}

fn roc_cmd(cfg: &RunConfig, out: &mut Outputs, inputs: &mut Vec<FileHash>) -> Result<String, CliError> {
    let learning = load(cfg, "learning", DatasetRole::Learning, inputs)?;
    let test = match cfg.test {
        Some(_) => Some(load(cfg, "test", DatasetRole::Test, inputs)?),
        None => None,
    };
    let mut text = String::new();
    if cfg.pct_change {
        if cfg.model != ModelChoice::Lmm {
            return Err(CliError::Config("pct_change scores come from the linear mixed model".into()));
        }
        let fit = fit_lmm(&learning, &cfg.validation_settings().lmm)?;
        let data = test.as_ref().unwrap_or(&learning);
        let (preds, observed) = pct_change_scores(&fit, data, cfg.variance.mode())?;
        let scores: Vec<RecordScore> = preds.iter().map(|p| p.score()).collect();
        let _ = writeln!(text, "experimental: relative change between consecutive visits, {} pairs", scores.len());
        for &k in &cfg.thresholds {
            let obs: Vec<bool> = observed.iter().map(|&f| f > k).collect();
            let curve = roc_curve(&scores, &obs, k, RuleSource::LmmInterval, &cfg.alphas)?;
            let label = k_label(k);
            out.write(&format!("roc_pct_k{label}.csv"), &curve_csv(&curve)?)?;
            out.write(&format!("roc_pct_k{label}.svg"), roc_svg(&[("relative change", &curve)]).as_bytes())?;
            curve_summary(&mut text, "pct", &curve, &cfg.budgets);
        }
    } else {
        let kinds: Vec<ModelKind> = match cfg.model {
            ModelChoice::Lmm => vec![ModelKind::Lmm],
            ModelChoice::Glmm => vec![ModelKind::Glmm],
            ModelChoice::Both => vec![ModelKind::Lmm, ModelKind::Glmm],
        };
        for &k in &cfg.thresholds {
            let label = k_label(k);
            let mut curves = Vec::new();
            for &kind in &kinds {
                let scored = model_scores(kind, &learning, test.as_ref(), k, cfg)?;
                let curve = roc_curve(&scored.scores, &scored.observed_above(k), k, kind.source(), &cfg.alphas)?;
                let name = match kind {
                    ModelKind::Lmm => "lmm",
                    ModelKind::Glmm => "glmm",
                };
                out.write(&format!("roc_{name}_k{label}.csv"), &curve_csv(&curve)?)?;
                curve_summary(&mut text, name, &curve, &cfg.budgets);
                curves.push((name, curve));
            }
            let labelled: Vec<(&str, &RocCurve)> = curves.iter().map(|(n, c)| (*n, c)).collect();
            out.write(&format!("roc_k{label}.svg"), roc_svg(&labelled).as_bytes())?;
        }
    }
    out.write("roc_summary.txt", text.as_bytes())?;
    Ok(text.trim_end().to_string())
}

fn bootstrap_cmd(cfg: &RunConfig, out: &mut Outputs, inputs: &mut Vec<FileHash>) -> Result<String, CliError> {
    cfg.require_replicates()?;
    let kind = single_model(cfg)?;
    let learning = load(cfg, "learning", DatasetRole::Learning, inputs)?;
    info!("bootstrap: {} replicates on {} threads", cfg.replicates, rayon::current_num_threads());
    let summary = bootstrap_grid(
        &learning,
        &cfg.thresholds,
        &cfg.budgets,
        cfg.replicates,
        cfg.seed,
        kind,
        &cfg.validation_settings(),
    )?;
    let text = summary.to_text();
    out.write("bootstrap.json", &to_json(&summary)?)?;
    out.write("bootstrap.txt", text.as_bytes())?;
    let mut csv = String::from("metric,threshold_k,fp_budget,estimate,lower,upper,replicates,failed\n");
    for ci in &summary.intervals {
        let est = ci.estimate.map(|e| e.to_string()).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{est},{},{},{},{}",
            ci.metric, ci.threshold_k, ci.fp_budget, ci.lower, ci.upper, ci.replicates, ci.failed
        );
    }
    out.write("bootstrap.csv", csv.as_bytes())?;
    Ok(text.trim_end().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(k_label(200.0), "200");
        assert_eq!(k_label(0.25), "0p25");
    }
}
