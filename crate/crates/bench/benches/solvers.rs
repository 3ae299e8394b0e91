use criterion::{criterion_group, criterion_main, Criterion};
use lqdst::pg_exact;
use lqdst::pg_zeroth::{empirical_gradient, EstimatorConfig, EstimatorMode};
use lqdst::sim::{rollout_cost, InitMode};
use lqdst::{presets, riccati};
use lqdst_bench::medium_team;
use std::hint::black_box;

fn riccati_solve(c: &mut Criterion) {
    let ex1 = presets::example1().model;
    let (team, _) = medium_team(1);
    c.bench_function("riccati/example1", |b| b.iter(|| riccati::solve(black_box(&ex1)).unwrap()));
    c.bench_function("riccati/medium", |b| b.iter(|| riccati::solve(black_box(&team)).unwrap()));
}

fn exact_gradient(c: &mut Criterion) {
    let (team, p) = medium_team(2);
    c.bench_function("evaluate/medium", |b| b.iter(|| pg_exact::evaluate(&team, black_box(&p), 0.0).unwrap()));
    c.bench_function("gradient/medium", |b| b.iter(|| pg_exact::gradient(&team, black_box(&p), 0.0).unwrap()));
}

fn rollouts(c: &mut Criterion) {
    let (team, p) = medium_team(3);
    c.bench_function("rollout/medium_T100", |b| {
        b.iter(|| rollout_cost(&team, black_box(&p), 100, 9, InitMode::Gaussian).unwrap())
    });
}

fn zeroth_order(c: &mut Criterion) {
    let preset = presets::example2();
    let p = preset.init_policy.clone().unwrap();
    let cfg = EstimatorConfig {
        samples: preset.samples,
        horizon: preset.horizon,
        radius: preset.radius,
        antithetic: false,
        init: preset.init,
    };
    c.bench_function("empirical_gradient/example2", |b| {
        b.iter(|| empirical_gradient(&preset.model, black_box(&p), &cfg, 5, EstimatorMode::Pg).unwrap())
    });
}

criterion_group!(benches, riccati_solve, exact_gradient, rollouts, zeroth_order);
criterion_main!(benches);
