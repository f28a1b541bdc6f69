//! Data-parallel vs single-threaded execution of the hot paths.
//!
//! The sequential side runs the same code inside a one-thread rayon pool;
//! building with `--no-default-features` removes rayon entirely.

use adra_core::grpo::{grpo_step, GrpoConfig};
use adra_core::pipeline::{make_world, n_sampling_attack, passive_attacks, EvalConfig, World, WorldConfig};
use adra_core::rewards::build_pools;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn world() -> World {
    make_world(&WorldConfig {
        n_members: 16,
        n_nonmembers: 16,
        seq_len: 40,
        order: 3,
        generator_order: 3,
        sft_epochs: 3,
        ..WorldConfig::default()
    })
    .expect("bench world")
}

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let seq = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let par = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("sequential", seq), ("parallel", par)]
}

fn bench(c: &mut Criterion) {
    let w = world();
    let cands = w.attack_candidates();
    let mut eval = EvalConfig::default();
    eval.sampling.max_tokens = 30;
    let mut cfg = GrpoConfig::default();
    cfg.sampling.max_tokens = 30;
    let pools_k = build_pools(&cands, 7, 1).unwrap();

    let mut g = c.benchmark_group("nsampling");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| n_sampling_attack(&w.base_policy, &cands, &eval, 3).unwrap()))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("grpo_step");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                pool.install(|| {
                    let mut p = w.base_policy.clone();
                    grpo_step(&mut p, &w.base_policy, &cands, &pools_k, None, &cfg, 5).unwrap()
                })
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("passive");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| passive_attacks(&w.base_policy, None, &cands, &[10.0, 20.0]).unwrap()))
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench
}
criterion_main!(benches);
