use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use pbc_core::glmm::{fit_glmm, GlmmSettings, Integration};
use pbc_core::lmm::{fit_lmm, LmmSettings, NewIndividualVariance};
use pbc_core::rules::{default_alpha_grid, roc_curve, RuleSource};
use pbc_core::sim::{simulate, simulate_dichotomous, GenerativeSpec};
use pbc_core::validation::{lmm_scores, ReConvention};

fn lmm(c: &mut Criterion) {
    let data = simulate(&GenerativeSpec::london_calibrated(1)).unwrap().dataset;
    let settings = LmmSettings::default();
    c.bench_function("lmm_fit_270", |b| b.iter(|| fit_lmm(black_box(&data), &settings).unwrap()));

    let fit = fit_lmm(&data, &settings).unwrap();
    let scored =
        lmm_scores(&fit, &data, ReConvention::PopulationAverage, NewIndividualVariance::WithRandomEffects).unwrap();
    let obs = scored.observed_above(350.0);
    let alphas = default_alpha_grid();
    c.bench_function("roc_curve_199", |b| {
        b.iter(|| roc_curve(black_box(&scored.scores), &obs, 350.0, RuleSource::LmmInterval, &alphas).unwrap())
    });
}

fn glmm(c: &mut Criterion) {
    let data = simulate_dichotomous(&GenerativeSpec::london_logistic(1), 350.0).unwrap().dataset;
    let mut group = c.benchmark_group("glmm_fit_270");
    group.sample_size(10);
    for (name, integration) in [("laplace", Integration::laplace()), ("agq7", Integration::adaptive_gh(7))] {
        let settings = GlmmSettings { integration, ..GlmmSettings::default() };
        group.bench_function(name, |b| b.iter(|| fit_glmm(black_box(&data), 350.0, &settings).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, lmm, glmm);
criterion_main!(benches);
