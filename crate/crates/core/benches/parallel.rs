//! Sequential against rayon execution on the three hot paths: batched
//! worker inference, the exact oracle and population search.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mtsp_core::baselines::{sa_solve, MetaConfig};
use mtsp_core::domain::generate_instance;
use mtsp_core::oracle::{solve_exact_with, OracleLimits};
use mtsp_core::worker::{greedy_plans, SubJob, Worker, WorkerArch};
use mtsp_core::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn worker_inference(c: &mut Criterion) {
    let worker = Worker::new(WorkerArch::default(), 0).unwrap();
    let insts: Vec<_> = (0..64).map(|s| generate_instance(20, 4, 100.0, s)).collect();
    let groups: Vec<Vec<usize>> = (0..4).map(|b| (b * 5..b * 5 + 5).collect()).collect();
    let jobs: Vec<SubJob<'_>> = insts
        .iter()
        .flat_map(|inst| {
            groups
                .iter()
                .enumerate()
                .map(move |(vehicle, ids)| SubJob { inst, vehicle, ids })
        })
        .collect();
    let mut g = c.benchmark_group("greedy_plans_256_jobs");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| greedy_plans(&worker, black_box(&jobs), exec).unwrap())
        });
    }
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let inst = generate_instance(8, 3, 100.0, 1);
    let limits = OracleLimits::default();
    let mut g = c.benchmark_group("oracle_n8_m3");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| solve_exact_with(black_box(&inst), &limits, exec).unwrap())
        });
    }
    g.finish();
}

fn annealing(c: &mut Criterion) {
    let inst = generate_instance(20, 4, 100.0, 2);
    let mut g = c.benchmark_group("sa_n20_50_iterations");
    g.sample_size(10);
    for (name, exec) in MODES {
        let cfg = MetaConfig {
            iterations: 50,
            exec,
            ..MetaConfig::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sa_solve(black_box(&inst), &cfg, 3).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, worker_inference, oracle, annealing);
criterion_main!(benches);
