//! Synthetic cohorts drawn from the piecewise-linear mixed model, giving every
//! estimator and rule a known ground truth.

use log::info;
use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{CohortDataset, DatasetRole, Observation, Subject};
use crate::design::{fixed_row, random_row, BaselineMode, DesignPair};
use crate::error::{PbcError, Result};

/// Follow-up length is `min + (max − min)·Beta(a, b)` months; visits follow a
/// first visit drawn uniformly in `first_visit_months` and then gamma
/// distributed gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitProcess {
    pub followup_min_months: f64,
    pub followup_max_months: f64,
    pub followup_beta_a: f64,
    pub followup_beta_b: f64,
    pub first_visit_months: (f64, f64),
    pub interval_mean_months: f64,
    pub interval_shape: f64,
    pub max_follow_up_visits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineDistributions {
    /// Log-normal baseline cd4.
    pub cd4_median: f64,
    pub cd4_log_sd: f64,
    /// Log-normal baseline wbc.
    pub wbc_median: f64,
    pub wbc_log_sd: f64,
    /// Normal baseline lymphocyte percent, clamped to `lymph_range`.
    pub lymph_mean: f64,
    pub lymph_sd: f64,
    pub lymph_range: (f64, f64),
}

/// AR(1) deviations of wbc and lymphocyte percent around the subject's
/// baseline values, with per-month autocorrelation `rho_per_month`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateProcess {
    pub rho_per_month: f64,
    pub wbc_sd: f64,
    pub lymph_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeSpec {
    pub beta_true: Vec<f64>,
    pub d_true: [[f64; 2]; 2],
    pub sigma2_true: f64,
    pub n_subjects: usize,
    pub knot_months: f64,
    pub visits: VisitProcess,
    pub baseline: BaselineDistributions,
    pub covariates: CovariateProcess,
    pub seed: u64,
}

impl GenerativeSpec {
    /// Parameters tuned to resemble a cohort of 270 patients followed for up
    /// to three years: median follow-up about 25 months, about ten records
    /// per subject, median baseline cd4 219.5 with IQR (114, 333), and
    /// roughly 15% / 45% of follow-up counts below 200 / 350.
    pub fn london_calibrated(seed: u64) -> Self {
        Self {
            beta_true: vec![-550.0, 300.0, -8.0, -2.5, 60.0, -57.0, 18.0, 5.0, 0.5, 0.1, -0.4, -0.1],
            d_true: [[10000.0, -60.0], [-60.0, 9.0]],
            sigma2_true: 3600.0,
            n_subjects: 270,
            knot_months: 1.0,
            visits: VisitProcess {
                followup_min_months: 2.0,
                followup_max_months: 36.0,
                followup_beta_a: 0.96,
                followup_beta_b: 0.61,
                first_visit_months: (0.25, 1.5),
                interval_mean_months: 2.8,
                interval_shape: 4.0,
                max_follow_up_visits: 23,
            },
            baseline: BaselineDistributions {
                cd4_median: 219.5,
                cd4_log_sd: 0.795,
                wbc_median: 5.0,
                wbc_log_sd: 0.3,
                lymph_mean: 25.0,
                lymph_sd: 8.0,
                lymph_range: (5.0, 60.0),
            },
            covariates: CovariateProcess { rho_per_month: 0.8, wbc_sd: 0.8, lymph_sd: 4.0 },
            seed,
        }
    }

    /// Logit-scale counterpart of [`Self::london_calibrated`] for the
    /// logistic mixed model at a threshold of 350: the continuous
    /// coefficients are shifted by the threshold and scaled by roughly
    /// `1.7 / sd(cd4)`.
    pub fn london_logistic(seed: u64) -> Self {
        Self {
            beta_true: vec![-13.2, 4.4, -0.12, -0.037, 0.88, -0.84, 0.26, 0.073, 0.0074, 0.0015, -0.0059, -0.0015],
            d_true: [[2.0, -0.012], [-0.012, 0.002]],
            sigma2_true: 0.0,
            ..Self::london_calibrated(seed)
        }
    }

    pub fn d_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.d_true[0][0], self.d_true[0][1], self.d_true[1][0], self.d_true[1][1])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PbcError::InvalidInput(format!("generative spec: {m}")));
        if self.beta_true.len() != 12 {
            return bad("beta_true must have 12 entries");
        }
        let d = self.d_matrix();
        if (d[(0, 1)] - d[(1, 0)]).abs() > 1e-12 * d.abs().max().max(1.0) {
            return bad("d_true must be symmetric");
        }
        if d[(0, 0)] < 0.0 || d[(1, 1)] < 0.0 || d.determinant() < -1e-9 * d.abs().max().powi(2) {
            return bad("d_true must be positive semi-definite");
        }
        if !(self.sigma2_true >= 0.0) {
            return bad("sigma2_true must be >= 0");
        }
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive");
        }
        if !(self.knot_months > 0.0) {
            return bad("knot_months must be positive");
        }
        let v = &self.visits;
        if !(v.followup_min_months > 0.0 && v.followup_max_months >= v.followup_min_months) {
            return bad("follow-up range invalid");
        }
        if !(v.followup_beta_a > 0.0
            && v.followup_beta_b > 0.0
            && v.interval_mean_months > 0.0
            && v.interval_shape > 0.0)
        {
            return bad("visit distribution parameters must be positive");
        }
        if !(v.first_visit_months.0 > 0.0 && v.first_visit_months.1 >= v.first_visit_months.0) {
            return bad("first visit range invalid");
        }
        if v.max_follow_up_visits == 0 {
            return bad("max_follow_up_visits must be positive");
        }
        let b = &self.baseline;
        if !(b.cd4_median > 0.0
            && b.cd4_log_sd >= 0.0
            && b.wbc_median > 0.0
            && b.wbc_log_sd >= 0.0
            && b.lymph_sd >= 0.0)
        {
            return bad("baseline distribution parameters invalid");
        }
        if !(b.lymph_range.0 > 0.0 && b.lymph_range.1 <= 100.0 && b.lymph_range.0 <= b.lymph_range.1) {
            return bad("lymph_range must lie in (0, 100]");
        }
        let c = &self.covariates;
        if !(0.0..=1.0).contains(&c.rho_per_month) || c.wbc_sd < 0.0 || c.lymph_sd < 0.0 {
            return bad("covariate process parameters invalid");
        }
        Ok(())
    }

    fn d_factor(&self) -> Matrix2<f64> {
        let d = self.d_matrix();
        let l11 = d[(0, 0)].max(0.0).sqrt();
        let l21 = if l11 > 0.0 { d[(1, 0)] / l11 } else { 0.0 };
        let l22 = (d[(1, 1)] - l21 * l21).max(0.0).sqrt();
        Matrix2::new(l11, 0.0, l21, l22)
    }

    /// Draws `b ~ N(0, D)`.
    pub fn draw_random_effects<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let l = self.d_factor();
        let u0: f64 = rng.sample(StandardNormal);
        let u1: f64 = rng.sample(StandardNormal);
        [l[(0, 0)] * u0, l[(1, 0)] * u0 + l[(1, 1)] * u1]
    }

    /// Responses `X β + Z b + ε` for a fixed design, without flooring.
    pub fn draw_responses<R: Rng + ?Sized>(&self, design: &DesignPair, b: [f64; 2], rng: &mut R) -> Vec<f64> {
        let sd = self.sigma2_true.sqrt();
        (0..design.n_rows())
            .map(|r| {
                let mean: f64 = design.x.row(r).iter().zip(&self.beta_true).map(|(x, b)| x * b).sum::<f64>()
                    + design.z[(r, 0)] * b[0]
                    + design.z[(r, 1)] * b[1];
                let e: f64 = rng.sample(StandardNormal);
                mean + sd * e
            })
            .collect()
    }
}

/// Cohort together with the random effects that generated it.
#[derive(Debug, Clone)]
pub struct SimulatedCohort {
    pub dataset: CohortDataset,
    pub true_effects: Vec<[f64; 2]>,
    /// Number of cd4 draws raised to the floor of 1.
    pub floored: usize,
}

impl SimulatedCohort {
    pub fn write_truth_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["subject_id", "b_intercept", "b_slope"])?;
        for (s, b) in self.dataset.subjects().iter().zip(&self.true_effects) {
            w.write_record([s.id.clone(), b[0].to_string(), b[1].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const CD4_FLOOR: f64 = 1.0;

/// Per-subject generator seeded by `(seed, subject index)` so each subject's
/// draws do not depend on any other subject.
pub fn subject_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

struct Skeleton {
    baseline: Observation,
    visits: Vec<Observation>,
}

fn draw_skeleton<R: Rng>(spec: &GenerativeSpec, rng: &mut R) -> Skeleton {
    let b = &spec.baseline;
    let v = &spec.visits;
    let c = &spec.covariates;
    let cd4_0 = LogNormal::new(b.cd4_median.ln(), b.cd4_log_sd).map(|d| d.sample(rng)).unwrap_or(b.cd4_median);
    let w0 = LogNormal::new(b.wbc_median.ln(), b.wbc_log_sd).map(|d| d.sample(rng)).unwrap_or(b.wbc_median);
    let l0 = Normal::new(b.lymph_mean, b.lymph_sd)
        .map(|d| d.sample(rng))
        .unwrap_or(b.lymph_mean)
        .clamp(b.lymph_range.0, b.lymph_range.1);

    let span = v.followup_max_months - v.followup_min_months;
    let followup = v.followup_min_months
        + span * Beta::new(v.followup_beta_a, v.followup_beta_b).map(|d| d.sample(rng)).unwrap_or(0.5);
    let gap =
        Gamma::new(v.interval_shape, v.interval_mean_months / v.interval_shape).expect("validated gamma parameters");
    let (lo, hi) = v.first_visit_months;
    let mut t = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let mut times = vec![t];
    while times.len() < v.max_follow_up_visits {
        t += gap.sample(rng);
        if t > followup {
            break;
        }
        times.push(t);
    }

    let mut w = w0;
    let mut l = l0;
    let mut prev = 0.0;
    let visits = times
        .into_iter()
        .map(|t| {
            let r = c.rho_per_month.powf(t - prev);
            let innov = (1.0 - r * r).max(0.0).sqrt();
            let ew: f64 = rng.sample(StandardNormal);
            let el: f64 = rng.sample(StandardNormal);
            w = (w0 + r * (w - w0) + innov * c.wbc_sd * ew).max(0.5);
            l = (l0 + r * (l - l0) + innov * c.lymph_sd * el).clamp(1.0, 100.0);
            prev = t;
            Observation { time_months: t, cd4: f64::NAN, wbc: w, lymph_pct: l }
        })
        .collect();
    Skeleton { baseline: Observation { time_months: 0.0, cd4: cd4_0, wbc: w0, lymph_pct: l0 }, visits }
}

fn skeleton_design(spec: &GenerativeSpec, sk: &Skeleton) -> DesignPair {
    let n = sk.visits.len();
    let mut x = nalgebra::DMatrix::zeros(n, 12);
    let mut z = nalgebra::DMatrix::zeros(n, 2);
    for (r, v) in sk.visits.iter().enumerate() {
        for (c, val) in fixed_row(&sk.baseline, v, spec.knot_months, BaselineMode::Covariate).into_iter().enumerate() {
            x[(r, c)] = val;
        }
        let zr = random_row(v);
        z[(r, 0)] = zr[0];
        z[(r, 1)] = zr[1];
    }
    DesignPair { x, z, knot_months: spec.knot_months }
}

fn subject_id(i: usize) -> String {
    format!("S{:05}", i + 1)
}

/// Continuous cd4 cohort from the linear mixed model. Draws below 1 are
/// raised to 1 and counted.
pub fn simulate(spec: &GenerativeSpec) -> Result<SimulatedCohort> {
    spec.validate()?;
    let mut subjects = Vec::with_capacity(spec.n_subjects);
    let mut effects = Vec::with_capacity(spec.n_subjects);
    let mut floored = 0;
    for i in 0..spec.n_subjects {
        let mut rng = subject_rng(spec.seed, i);
        let sk = draw_skeleton(spec, &mut rng);
        let design = skeleton_design(spec, &sk);
        let b = spec.draw_random_effects(&mut rng);
        let y = spec.draw_responses(&design, b, &mut rng);
        let mut obs = vec![sk.baseline];
        for (v, y) in sk.visits.iter().zip(y) {
            let cd4 = if y < CD4_FLOOR {
                floored += 1;
                CD4_FLOOR
            } else {
                y
            };
            obs.push(Observation { cd4, ..*v });
        }
        subjects.push(Subject::new(subject_id(i), obs)?);
        effects.push(b);
    }
    if floored > 0 {
        info!("simulate: {floored} cd4 draw(s) floored at {CD4_FLOOR}");
    }
    Ok(SimulatedCohort {
        dataset: CohortDataset::new(subjects, DatasetRole::Learning)?,
        true_effects: effects,
        floored,
    })
}

/// Binary-outcome cohort from the logistic mixed model, with `beta_true`
/// read on the logit scale. Each follow-up indicator is stored as a cd4 value
/// of `1.25·K` (above) or `0.75·K` (below), so dichotomizing at `K` recovers
/// it exactly.
pub fn simulate_dichotomous(spec: &GenerativeSpec, threshold_k: f64) -> Result<SimulatedCohort> {
    spec.validate()?;
    if !(threshold_k > 0.0) {
        return Err(PbcError::InvalidInput("threshold must be positive".into()));
    }
    let mut subjects = Vec::with_capacity(spec.n_subjects);
    let mut effects = Vec::with_capacity(spec.n_subjects);
    for i in 0..spec.n_subjects {
        let mut rng = subject_rng(spec.seed, i);
        let sk = draw_skeleton(spec, &mut rng);
        let design = skeleton_design(spec, &sk);
        let b = spec.draw_random_effects(&mut rng);
        let mut obs = vec![sk.baseline];
        for (r, v) in sk.visits.iter().enumerate() {
            let eta: f64 = design.x.row(r).iter().zip(&spec.beta_true).map(|(x, b)| x * b).sum::<f64>()
                + design.z[(r, 0)] * b[0]
                + design.z[(r, 1)] * b[1];
            let p = 1.0 / (1.0 + (-eta).exp());
            let above = rng.random::<f64>() < p;
            let cd4 = if above { 1.25 * threshold_k } else { 0.75 * threshold_k };
            obs.push(Observation { cd4, ..*v });
        }
        subjects.push(Subject::new(subject_id(i), obs)?);
        effects.push(b);
    }
    Ok(SimulatedCohort {
        dataset: CohortDataset::new(subjects, DatasetRole::Learning)?,
        true_effects: effects,
        floored: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::build_design_only;

    #[test]
    fn same_seed_same_bytes() {
        let spec = GenerativeSpec { n_subjects: 30, ..GenerativeSpec::london_calibrated(7) };
        let mut a = Vec::new();
        let mut b = Vec::new();
        simulate(&spec).unwrap().dataset.write_csv(&mut a).unwrap();
        simulate(&spec).unwrap().dataset.write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let other = GenerativeSpec { seed: 8, ..spec };
        let mut c = Vec::new();
        simulate(&other).unwrap().dataset.write_csv(&mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_trajectories_are_piecewise_linear() {
        let mut spec = GenerativeSpec { n_subjects: 20, ..GenerativeSpec::london_calibrated(3) };
        spec.sigma2_true = 0.0;
        spec.d_true = [[0.0, 0.0], [0.0, 0.0]];
        spec.covariates.wbc_sd = 0.0;
        spec.covariates.lymph_sd = 0.0;
        // Positive trajectories so flooring never applies.
        spec.beta_true = vec![100.0, 50.0, 1.0, 1.0, 40.0, -35.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let sim = simulate(&spec).unwrap();
        assert_eq!(sim.floored, 0);
        for s in sim.dataset.subjects() {
            let base = s.baseline();
            let level = 100.0 + 50.0 * base.cd4.log10() + 3.0 * base.wbc + 2.0 * base.lymph_pct;
            for o in s.follow_up() {
                let expected = level + 40.0 * o.time_months - 35.0 * (o.time_months - 1.0).max(0.0);
                assert!((o.cd4 - expected).abs() < 1e-9 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn calibrated_cohort_shape() {
        let sim = simulate(&GenerativeSpec::london_calibrated(11)).unwrap();
        let data = &sim.dataset;
        assert_eq!(data.n_subjects(), 270);
        let mut base: Vec<f64> = data.subjects().iter().map(|s| s.baseline().cd4).collect();
        base.sort_by(f64::total_cmp);
        let median = 0.5 * (base[134] + base[135]);
        assert!(median > 114.0 && median < 333.0, "median baseline {median}");
        let per_subject = data.total_records() as f64 / 270.0;
        assert!(per_subject > 7.0 && per_subject < 13.0, "{per_subject} records per subject");
        let post: Vec<f64> = data.subjects().iter().flat_map(|s| s.follow_up().iter().map(|o| o.cd4)).collect();
        let below200 = post.iter().filter(|&&c| c <= 200.0).count() as f64 / post.len() as f64;
        assert!(below200 > 0.05 && below200 < 0.35, "below 200: {below200}");
        assert!((sim.floored as f64) < 0.03 * post.len() as f64);
    }

    #[test]
    fn response_variance_matches_model() {
        let spec = GenerativeSpec::london_calibrated(5);
        let sim = simulate(&GenerativeSpec { n_subjects: 1, ..spec.clone() }).unwrap();
        let design = build_design_only(&sim.dataset.subjects()[0], 1.0, BaselineMode::Covariate).unwrap();
        let n = design.n_rows();
        let draws = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut sum = vec![0.0; n];
        let mut sum2 = vec![0.0; n];
        let mut cross = 0.0;
        for _ in 0..draws {
            let b = spec.draw_random_effects(&mut rng);
            let y = spec.draw_responses(&design, b, &mut rng);
            for r in 0..n {
                sum[r] += y[r];
                sum2[r] += y[r] * y[r];
            }
            if n > 1 {
                cross += y[0] * y[n - 1];
            }
        }
        let d = spec.d_matrix();
        for r in 0..n {
            let mean = sum[r] / draws as f64;
            let var = sum2[r] / draws as f64 - mean * mean;
            let t = design.z[(r, 1)];
            let model = d[(0, 0)] + 2.0 * t * d[(0, 1)] + t * t * d[(1, 1)] + spec.sigma2_true;
            assert!((var / model - 1.0).abs() < 0.02, "row {r}: {var} vs {model}");
        }
        if n > 1 {
            let m0 = sum[0] / draws as f64;
            let m1 = sum[n - 1] / draws as f64;
            assert!(cross / draws as f64 - m0 * m1 > 0.0);
        }
    }
}
