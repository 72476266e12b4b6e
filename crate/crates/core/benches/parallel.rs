//! Sequential vs thread-pool timings for the three fan-out points:
//! batch training steps, scene evaluation, and the finite-difference sweep.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use navplan::harness::{evaluate_with_store, grad_check, train, L2Mode, TrainConfig};
use navplan::neural::ParamStore;
use navplan::par::Parallelism;
use navplan::planner::{register_model_params, ModelConfig, PlanMode};
use navplan::scene::Scene;
use navplan::simworld::{generate_dataset, GenConfig};

fn bench_model() -> ModelConfig {
    let mut model = ModelConfig::default();
    model.tokens.dim = 16;
    model.tokens.modes = 2;
    model
}

fn bench_scenes(n: usize) -> Vec<Scene> {
    let cfg = GenConfig {
        train_scenes: n,
        val_scenes: 0,
        seed: 1234,
        ..GenConfig::default()
    };
    generate_dataset(&cfg).unwrap().scenes().to_vec()
}

fn both() -> [(&'static str, Parallelism); 2] {
    [
        ("sequential", Parallelism::Sequential),
        ("rayon", Parallelism::Rayon),
    ]
}

fn evaluation(c: &mut Criterion) {
    let model = bench_model();
    let mut store = ParamStore::new(7);
    register_model_params(&mut store, &model).unwrap();
    let scenes = bench_scenes(24);
    let mut group = c.benchmark_group("evaluate_24_scenes");
    group.sample_size(10);
    for (name, par) in both() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &par, |b, &par| {
            b.iter(|| {
                evaluate_with_store(
                    &store,
                    &model,
                    PlanMode::TgtPath,
                    &scenes,
                    L2Mode::Instantaneous,
                    "all",
                    par,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn training_epoch(c: &mut Criterion) {
    let scenes = bench_scenes(16);
    let mut cfg = TrainConfig {
        epochs_stage1: 0,
        epochs_stage2: 1,
        batch_size: 16,
        seed: 7,
        ..TrainConfig::default()
    };
    cfg.model = bench_model();
    let mut group = c.benchmark_group("train_one_batch_of_16");
    group.sample_size(10);
    for (name, par) in both() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &par, |b, &par| {
            b.iter(|| train(&cfg, &scenes, None, par).unwrap())
        });
    }
    group.finish();
}

fn gradient_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("finite_diff_sweep");
    group.sample_size(10);
    for (name, par) in both() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &par, |b, &par| {
            b.iter(|| grad_check(5, par).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, evaluation, training_epoch, gradient_sweep);
criterion_main!(benches);
