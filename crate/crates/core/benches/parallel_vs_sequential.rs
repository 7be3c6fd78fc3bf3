use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rpbayes::conc::{split_kl_coverage, CoverageConfig};
use rpbayes::data::make_blobs;
use rpbayes::elbo::{random_sweep, QuadratureConfig};
use rpbayes::exec::Exec;
use rpbayes::pmodel::{gibbs_zero_one_losses, init_posterior, ClassifierArch};
use rpbayes::rpb::excess_support;
use rpbayes::templin::{bayes_derivative, Setting};

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bayes_derivative_bench(c: &mut Criterion) {
    let setting = Setting::PriorMisspec.config();
    let spec = setting.spec().unwrap();
    let task = setting.train_task(0).unwrap();
    let eval = setting.eval_task(2_000, 0).unwrap();
    let mut group = c.benchmark_group("bayes_derivative");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(name, |b| {
            b.iter(|| bayes_derivative(1.0, &task, &spec, &eval, 2_000, 0, black_box(exec)).unwrap())
        });
    }
    group.finish();
}

fn gibbs_losses_bench(c: &mut Criterion) {
    let arch = ClassifierArch::one_hidden(20, 64, 10).unwrap();
    let data = make_blobs(20_000, 10, 20, 3.0, 1).unwrap();
    let dist = init_posterior(&arch, 0.03, 2).unwrap();
    let mut group = c.benchmark_group("gibbs_zero_one_losses");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::new(name, data.len()), &exec, |b, &exec| {
            b.iter(|| gibbs_zero_one_losses(&arch, &dist, &data, 0..data.len(), 3, 0, exec))
        });
    }
    group.finish();
}

fn coverage_bench(c: &mut Criterion) {
    let support = excess_support(0.5).unwrap();
    let cfg = CoverageConfig {
        trials: 2_000,
        ..CoverageConfig::default()
    };
    let mut group = c.benchmark_group("split_kl_coverage");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(name, |b| {
            b.iter(|| split_kl_coverage(&support, &[0.1, 0.4, 0.3, 0.2], cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn elbo_sweep_bench(c: &mut Criterion) {
    let mut group = c.benchmark_group("elbo_sweep");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(name, |b| {
            b.iter(|| random_sweep(50, 6, 0, QuadratureConfig::default(), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bayes_derivative_bench,
    gibbs_losses_bench,
    coverage_bench,
    elbo_sweep_bench
);
criterion_main!(benches);
