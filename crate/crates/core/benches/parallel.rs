// Sequential vs rayon execution of the three data-parallel hot spots.
// Without the `parallel` feature both arms run sequentially.

use cams::information::MseEvaluator;
use cams::montecarlo::{block_mse_experiment, TrialOptions};
use cams::scenarios::{build_doa, DoaConfig};
use cams::solver::{sweep_curve, SolverConfig};
use cams::{CovMatrix, Exec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn ecrb_gradient(c: &mut Criterion) {
    let s = build_doa(&DoaConfig::tapered_uniform_reference()).unwrap();
    let thetas = s.theta_samples();
    let q = CovMatrix::scaled_identity(s.tx_dim(), s.power);
    let mut group = c.benchmark_group("ecrb_gradient_m16_s512");
    for (name, exec) in MODES {
        let ev = MseEvaluator::new(&s, &thetas).unwrap().with_exec(exec);
        group
            .bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| black_box(ev.ecrb_gradient(&q).unwrap())));
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let s = build_doa(&DoaConfig::tapered_uniform_reference()).unwrap();
    let q = CovMatrix::scaled_identity(s.tx_dim(), s.power);
    let mut group = c.benchmark_group("doa_trials_n128_x64");
    group.sample_size(10);
    for (name, exec) in MODES {
        let opts = TrialOptions { n_block: 128, trials: 64, grid_size: 512, exec, ..Default::default() };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(block_mse_experiment(&s, &q, &opts).unwrap().ratio))
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let mut cfg = DoaConfig::tapered_uniform_reference();
    cfg.m_tx = 6;
    cfg.t_rx = 6;
    let s = build_doa(&cfg).unwrap().with_prior_samples(64).unwrap();
    let mut group = c.benchmark_group("doa_sweep_m6_4pts");
    group.sample_size(10);
    for (name, exec) in MODES {
        let config = SolverConfig::default().with_exec(exec);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(sweep_curve(&s, 4, &config, false).unwrap().points.len()))
        });
    }
    group.finish();
}

criterion_group!(benches, ecrb_gradient, monte_carlo, sweep);
criterion_main!(benches);
