//! α-prediction rules, confusion tables and ROC curves.
//!
//! A record is classified above the threshold `K` either when its predicted
//! probability satisfies `θ̂ ≥ 1 − α` or when the lower bound of its one-sided
//! `(1 − α)` prediction interval exceeds `K`.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PbcError, Result};
use crate::lmm::{LmmFit, VarianceMode};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleSource {
    GlmmProb,
    LmmInterval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaRule {
    pub alpha: f64,
    pub threshold_k: f64,
    pub source: RuleSource,
}

/// Model output for one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordScore {
    /// Predicted probability of lying above the threshold.
    Probability(f64),
    /// Normal predictive distribution of the response.
    Normal { mean: f64, sd: f64 },
}

impl RecordScore {
    /// `P(Y > K)` under the score's own model.
    pub fn probability_above(&self, k: f64) -> f64 {
        match *self {
            RecordScore::Probability(p) => p,
            RecordScore::Normal { mean, sd } => normal::cdf((mean - k) / sd),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(PbcError::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

impl AlphaRule {
    pub fn new(alpha: f64, threshold_k: f64, source: RuleSource) -> Result<Self> {
        check_alpha(alpha)?;
        if !(threshold_k > 0.0 && threshold_k.is_finite()) {
            return Err(PbcError::InvalidInput(format!("threshold must be positive, got {threshold_k}")));
        }
        Ok(Self { alpha, threshold_k, source })
    }

    /// 1 (true) when the record is predicted above the threshold.
    pub fn classify(&self, score: &RecordScore) -> Result<bool> {
        match (self.source, score) {
            (RuleSource::GlmmProb, RecordScore::Probability(p)) => Ok(classify_probability(*p, self.alpha)),
            (RuleSource::LmmInterval, RecordScore::Normal { mean, sd }) => {
                Ok(classify_bound(lower_bound_from(*mean, *sd, self.alpha), self.threshold_k))
            }
            (source, _) => Err(PbcError::InvalidInput(format!("score kind does not match rule source {source:?}"))),
        }
    }
}

/// `θ̂ ≥ 1 − α`.
pub fn classify_probability(theta: f64, alpha: f64) -> bool {
    theta >= 1.0 - alpha
}

/// `l > K`.
pub fn classify_bound(lower_bound: f64, k: f64) -> bool {
    lower_bound > k
}

/// `mean − z_α · sd` with `z_α` the upper-α standard normal quantile.
pub fn lower_bound_from(mean: f64, sd: f64, alpha: f64) -> f64 {
    mean - normal::upper_quantile(alpha) * sd
}

/// Lower bound of the one-sided `(1 − α)` prediction interval at design row
/// `(x, z)` with random effects `b`.
pub fn lower_bound(fit: &LmmFit, x: &[f64], z: &[f64], b: &[f64], alpha: f64, mode: VarianceMode<'_>) -> Result<f64> {
    check_alpha(alpha)?;
    let mean = fit.predict_mean(x, z, b)?;
    let var = fit.prediction_variance(x, z, mode)?;
    Ok(lower_bound_from(mean, var.sqrt(), alpha))
}

/// Counts laid out with predictions in rows and observations in columns:
/// `n11` predicted and observed above, `n12` predicted above but observed
/// below, `n21` predicted below but observed above, `n22` both below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub n11: u64,
    pub n12: u64,
    pub n21: u64,
    pub n22: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionTable {
    pub fn new(n11: u64, n12: u64, n21: u64, n22: u64) -> Self {
        Self { n11, n12, n21, n22 }
    }

    pub fn from_predictions(predicted: &[bool], observed: &[bool]) -> Result<Self> {
        if predicted.len() != observed.len() {
            return Err(PbcError::LengthMismatch { expected: observed.len(), actual: predicted.len() });
        }
        if predicted.is_empty() {
            return Err(PbcError::InvalidInput("no records to evaluate".into()));
        }
        let mut t = Self::default();
        for (&p, &o) in predicted.iter().zip(observed) {
            match (p, o) {
                (true, true) => t.n11 += 1,
                (true, false) => t.n12 += 1,
                (false, true) => t.n21 += 1,
                (false, false) => t.n22 += 1,
            }
        }
        Ok(t)
    }

    /// Predicted above.
    pub fn n1_dot(&self) -> u64 {
        self.n11 + self.n12
    }

    pub fn n2_dot(&self) -> u64 {
        self.n21 + self.n22
    }

    /// Observed above.
    pub fn n_dot1(&self) -> u64 {
        self.n11 + self.n21
    }

    pub fn n_dot2(&self) -> u64 {
        self.n12 + self.n22
    }

    pub fn total(&self) -> u64 {
        self.n11 + self.n12 + self.n21 + self.n22
    }

    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.n11, self.n_dot1())
    }

    pub fn specificity(&self) -> Option<f64> {
        ratio(self.n22, self.n_dot2())
    }

    pub fn fp_rate(&self) -> Option<f64> {
        ratio(self.n12, self.n_dot2())
    }

    pub fn ppv(&self) -> Option<f64> {
        ratio(self.n11, self.n1_dot())
    }

    pub fn npv(&self) -> Option<f64> {
        ratio(self.n22, self.n2_dot())
    }

    /// Fraction of records predicted above the threshold, which would be
    /// spared a confirmatory test.
    pub fn savings(&self) -> Option<f64> {
        ratio(self.n1_dot(), self.total())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleEvaluation {
    pub rule: AlphaRule,
    pub table: ConfusionTable,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub fp_rate: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

impl RuleEvaluation {
    pub fn from_table(rule: AlphaRule, table: ConfusionTable) -> Self {
        Self {
            rule,
            table,
            sensitivity: table.sensitivity(),
            specificity: table.specificity(),
            fp_rate: table.fp_rate(),
            ppv: table.ppv(),
            npv: table.npv(),
        }
    }

    pub fn savings(&self) -> Option<f64> {
        self.table.savings()
    }
}

pub fn evaluate_rule(rule: AlphaRule, predicted: &[bool], observed: &[bool]) -> Result<RuleEvaluation> {
    Ok(RuleEvaluation::from_table(rule, ConfusionTable::from_predictions(predicted, observed)?))
}

/// Classifies every score with `rule` and tabulates against `observed`.
pub fn evaluate_scores(rule: AlphaRule, scores: &[RecordScore], observed: &[bool]) -> Result<RuleEvaluation> {
    let predicted = scores.iter().map(|s| rule.classify(s)).collect::<Result<Vec<_>>>()?;
    evaluate_rule(rule, &predicted, observed)
}

/// `k / 200` for `k = 1, …, 199`.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..200).map(|k| k as f64 / 200.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub alpha: f64,
    pub fp_rate: f64,
    pub sensitivity: f64,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub table: ConfusionTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub threshold_k: f64,
    pub source: RuleSource,
    /// Sorted by false-positive rate, then sensitivity, then α.
    pub points: Vec<RocPoint>,
}

/// One point per α in `alphas`, which must be strictly increasing inside
/// `(0, 1)`. Both outcome classes must be present in `observed`.
pub fn roc_curve(
    scores: &[RecordScore],
    observed: &[bool],
    threshold_k: f64,
    source: RuleSource,
    alphas: &[f64],
) -> Result<RocCurve> {
    if alphas.is_empty() {
        return Err(PbcError::InvalidInput("alpha grid is empty".into()));
    }
    for a in alphas {
        check_alpha(*a)?;
    }
    if alphas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PbcError::InvalidInput("alpha grid must be strictly increasing".into()));
    }
    if scores.len() != observed.len() {
        return Err(PbcError::LengthMismatch { expected: observed.len(), actual: scores.len() });
    }
    let positives = observed.iter().filter(|&&o| o).count();
    if positives == 0 || positives == observed.len() {
        return Err(PbcError::InvalidInput(
            "observed outcomes contain a single class; sensitivity or false-positive rate is undefined".into(),
        ));
    }
    let mut points = alphas
        .par_iter()
        .map(|&alpha| {
            let rule = AlphaRule::new(alpha, threshold_k, source)?;
            let eval = evaluate_scores(rule, scores, observed)?;
            Ok(RocPoint {
                alpha,
                fp_rate: eval.fp_rate.unwrap_or(f64::NAN),
                sensitivity: eval.sensitivity.unwrap_or(f64::NAN),
                ppv: eval.ppv,
                npv: eval.npv,
                table: eval.table,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| {
        a.fp_rate.total_cmp(&b.fp_rate).then(a.sensitivity.total_cmp(&b.sensitivity)).then(a.alpha.total_cmp(&b.alpha))
    });
    Ok(RocCurve { threshold_k, source, points })
}

impl RocCurve {
    /// Trapezoidal area under the curve through `(0, 0)` and `(1, 1)`.
    pub fn auc(&self) -> f64 {
        let mut pts = vec![(0.0, 0.0)];
        pts.extend(self.points.iter().map(|p| (p.fp_rate, p.sensitivity)));
        pts.push((1.0, 1.0));
        pts.windows(2).map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1)).sum()
    }

    /// Highest sensitivity among points with `fp_rate ≤ budget` (linear
    /// interpolation is not used; only evaluated rules count).
    pub fn sensitivity_at(&self, budget: f64) -> Option<f64> {
        select_point(self, budget).ok().map(|p| p.sensitivity)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["alpha", "fp_rate", "sensitivity", "ppv", "npv"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            w.write_record([
                p.alpha.to_string(),
                p.fp_rate.to_string(),
                p.sensitivity.to_string(),
                opt(p.ppv),
                opt(p.npv),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The point with maximal sensitivity subject to `fp_rate ≤ budget`; ties go
/// to the smaller false-positive rate, then the smaller α.
pub fn select_point(curve: &RocCurve, fp_budget: f64) -> Result<&RocPoint> {
    if curve.points.is_empty() {
        return Err(PbcError::InvalidInput("ROC curve has no points".into()));
    }
    curve
        .points
        .iter()
        .filter(|p| p.fp_rate <= fp_budget)
        .min_by(|a, b| {
            b.sensitivity
                .total_cmp(&a.sensitivity)
                .then(a.fp_rate.total_cmp(&b.fp_rate))
                .then(a.alpha.total_cmp(&b.alpha))
        })
        .ok_or(PbcError::NoFeasibleRule { budget: fp_budget })
}

pub fn select_rule(curve: &RocCurve, fp_budget: f64) -> Result<AlphaRule> {
    let p = select_point(curve, fp_budget)?;
    AlphaRule::new(p.alpha, curve.threshold_k, curve.source)
}

/// Static SVG with false-positive rate on the x axis and sensitivity on the
/// y axis, one polyline per curve.
pub fn roc_svg(curves: &[(&str, &RocCurve)]) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let full = SIZE + 2.0 * PAD;
    let px = |fp: f64| PAD + fp * SIZE;
    let py = |s: f64| PAD + (1.0 - s) * SIZE;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{full}" viewBox="0 0 {full} {full}">"#
    );
    let _ = writeln!(svg, r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        svg,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#aaaaaa" stroke-dasharray="4 4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{v:.1}</text>"#,
            px(v),
            PAD + SIZE + 16.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{v:.1}</text>"#,
            PAD - 6.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">False positive rate</text>"#,
        PAD + SIZE / 2.0,
        full - 8.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 14 {:.1})">Sensitivity</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    );
    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts = format!("{:.2},{:.2}", px(0.0), py(0.0));
        for p in &curve.points {
            let _ = write!(pts, " {:.2},{:.2}", px(p.fp_rate), py(p.sensitivity));
        }
        let _ = write!(pts, " {:.2},{:.2}", px(1.0), py(1.0));
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" fill="{color}">{}</text>"#,
            PAD + SIZE - 150.0,
            PAD + SIZE - 20.0 - 16.0 * i as f64,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
