//! Contrasts the data-parallel execution paths with their sequential
//! fallbacks on two representative workloads: independent Monte Carlo
//! trials and a small learning-rate grid. Results are identical by
//! construction (trial-index-ordered reductions); only throughput differs.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lvlab_core::model::OptimizerKind;
use lvlab_core::montecarlo::{gaussian_matrix, run_trials, run_trials_sequential, RngStream};
use lvlab_core::sweep::{run_sweep, run_sweep_sequential, InitRule, LrRule, SweepConfig};

fn trial_workload(stream: &RngStream) -> impl Fn(u64) -> Result<f64, lvlab_core::montecarlo::MonteCarloError> + Sync + '_ {
    move |t| {
        let m = gaussian_matrix(24, 96, 1.0, &stream.substream(t))?;
        Ok(m.iter().map(|x| x * x).sum::<f64>() / m.len() as f64)
    }
}

fn bench_monte_carlo_trials(c: &mut Criterion) {
    let stream = RngStream::new(77, 0);
    let mut group = c.benchmark_group("monte_carlo_512_trials");
    group.sample_size(20);
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(run_trials(512, trial_workload(&stream))))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(run_trials_sequential(512, trial_workload(&stream))))
    });
    group.finish();
}

fn small_grid() -> SweepConfig {
    SweepConfig {
        configurations: vec![(16, 128)],
        lr_grid: vec![0.001, 0.003, 0.01, 0.03, 0.1],
        hidden_lr: LrRule {
            base_eta: 0.05,
            exponent: -1.0,
        },
        embedding_init: InitRule {
            variance_exponent: -1.0,
        },
        output_init: InitRule {
            variance_exponent: -1.0,
        },
        seeds: vec![0, 1],
        steps: 20,
        optimizer: OptimizerKind::SignSgd,
        zipf_exponent: 1.0,
    }
}

fn bench_sweep_grid(c: &mut Criterion) {
    let config = small_grid();
    let mut group = c.benchmark_group("sweep_10_cells");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(run_sweep(&config).expect("sweep")))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(run_sweep_sequential(&config).expect("sweep")))
    });
    group.finish();
}

criterion_group!(benches, bench_monte_carlo_trials, bench_sweep_grid);
criterion_main!(benches);
