//! Sequential vs rayon execution of the three hot kernels.

use asp_core::datagen::generate;
use asp_core::distributions::Family;
use asp_core::nn::{batch_gradient, Loss, Network, PeriodData};
use asp_core::solvers::{saa_objective, solve_dro, AmbiguitySet, DroConfig, ScenarioSet, ScenarioSource};
use asp_core::{CostParams, Exec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn saa(c: &mut Criterion) {
    let ds = generate(Family::Normal, 50_000, 5, 1, 2).unwrap();
    let sc = ScenarioSet::new(ds.duration_periods(), ScenarioSource::Historical).unwrap();
    let costs = CostParams::new(1.0, 2.0).unwrap();
    let s = vec![5.5; 5];
    let mut g = c.benchmark_group("saa_objective");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| b.iter(|| saa_objective(black_box(&sc), &s, &costs, exec)));
    }
    g.finish();
}

fn dro(c: &mut Criterion) {
    let grid: Vec<f64> = (0..11).map(|k| k as f64).collect();
    let amb = AmbiguitySet::new(vec![grid; 5], vec![1, 2], vec![vec![5.0, 29.0]; 5]).unwrap();
    let costs = CostParams::new(1.0, 1.0).unwrap();
    let mut g = c.benchmark_group("dro_solve");
    g.sample_size(10);
    for (name, exec) in MODES {
        let cfg = DroConfig { exec, ..DroConfig::default() };
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| b.iter(|| solve_dro(black_box(&amb), &costs, cfg).unwrap()));
    }
    g.finish();
}

fn gradient(c: &mut Criterion) {
    let ds = generate(Family::Normal, 4000, 5, 3, 4).unwrap();
    let data = PeriodData::from_dataset(&ds);
    let net = Network::xavier(&[41, 64, 1], ds.scaler(), 5).unwrap();
    let periods: Vec<usize> = (0..data.periods()).collect();
    let costs = CostParams::new(1.0, 5.0).unwrap();
    let mut g = c.benchmark_group("batch_gradient");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| batch_gradient(black_box(&net), &data, &periods, &Loss::AspSurrogate, &costs, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, saa, dro, gradient);
criterion_main!(benches);
