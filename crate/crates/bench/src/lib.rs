//! Criterion benchmarks for model fitting and ROC construction; see
//! `benches/fitting.rs`.
