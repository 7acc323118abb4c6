//! Sequential vs rayon execution of the same kernels. Both paths give
//! bit-identical results, so only wall time differs.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use superdrift::model::{make_problem, Preset, PresetOptions};
use superdrift::solver::{DtPolicy, Stepper};
use superdrift::{Exec, Grid, SolverConfig};

fn stepping(c: &mut Criterion) {
    let mut group = c.benchmark_group("ten_steps");
    group.sample_size(10);
    for n in [24usize, 48] {
        let grid = Arc::new(Grid::unit(3, n).unwrap());
        let problem = make_problem(
            Preset::PowerDrift,
            grid,
            PresetOptions {
                theta: Some(0.5),
                width: Some(0.1),
                ..Default::default()
            },
        )
        .unwrap();
        for exec in [Exec::Sequential, Exec::Parallel] {
            let config = SolverConfig {
                dt: DtPolicy::Fixed { dt: 1e-4 },
                exec,
                ..Default::default()
            };
            group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), format!("{n}^3")), &config, |b, config| {
                b.iter(|| {
                    let mut stepper = Stepper::new(&problem, config).unwrap();
                    for _ in 0..10 {
                        black_box(stepper.advance(1e-4).unwrap());
                    }
                })
            });
        }
    }
    group.finish();
}

fn reductions(c: &mut Criterion) {
    let mut group = c.benchmark_group("lp_sum");
    let n = 1 << 20;
    let values: Vec<f64> = (0..n).map(|i| ((i as f64) * 1e-3).sin()).collect();
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_function(format!("{exec:?}"), |b| b.iter(|| exec.sum(n, |i| values[i].abs().powf(1.5))));
    }
    group.finish();
}

criterion_group!(benches, stepping, reductions);
criterion_main!(benches);
