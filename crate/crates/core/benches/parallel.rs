//! Sequential vs rayon-parallel execution of the data-parallel hot loops.
//! Build with `--no-default-features` to see the fallback compiled alone.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use isoprune::data::synthetic;
use isoprune::harness::jsv_probe;
use isoprune::isometry::{jsv_sweep_with, mean_jsv_with};
use isoprune::nn::{evaluate_with, ArchId, Network};
use isoprune::par::Execution;
use isoprune::pruning::default_targets;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn net(arch: ArchId) -> Network {
    let mut n = Network::build(arch);
    n.init_orthogonal(1);
    n
}

fn bench_evaluate(c: &mut Criterion) {
    let data = synthetic(6000, 1).unwrap();
    let mut g = c.benchmark_group("evaluate");
    g.sample_size(10);
    for arch in [ArchId::Mlp7Relu, ArchId::Lenet5Relu] {
        let n = net(arch);
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, arch), &n, |b, n| {
                b.iter(|| black_box(evaluate_with(n, &data.test, exec).unwrap()))
            });
        }
    }
    g.finish();
}

fn bench_mean_jsv(c: &mut Criterion) {
    let data = synthetic(600, 2).unwrap();
    let probe = jsv_probe(&data, 32).unwrap();
    let mut g = c.benchmark_group("mean_jsv");
    g.sample_size(10);
    for arch in [ArchId::Mlp7Relu, ArchId::Lenet5Relu] {
        let n = net(arch);
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, arch), &n, |b, n| {
                b.iter(|| black_box(mean_jsv_with(n, &probe, exec).unwrap()))
            });
        }
    }
    g.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let data = synthetic(600, 3).unwrap();
    let probe = jsv_probe(&data, 8).unwrap();
    let ratios = [0.0, 0.3, 0.5, 0.7, 0.9];
    let n = net(ArchId::Mlp7Relu);
    let targets = default_targets(ArchId::Mlp7Relu);
    let mut g = c.benchmark_group("jsv_sweep");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| black_box(jsv_sweep_with(&n, &targets, &ratios, &probe, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_evaluate, bench_mean_jsv, bench_sweep);
criterion_main!(benches);
