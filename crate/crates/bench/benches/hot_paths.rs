use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use phibayes::asymptotics::{compute_s, compute_v};
use phibayes::mcmc::run_chain;
use phibayes::{ParamVector, SamplerConfig};
use phibayes_bench::{location_posterior, location_scale_criterion};
use std::hint::black_box;

fn log_posterior(c: &mut Criterion) {
    let mut group = c.benchmark_group("log_unnormalized");
    for n in [50, 500, 5000] {
        let post = location_posterior(0.5, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| post.log_unnormalized(black_box(&[0.05])))
        });
    }
    group.finish();
}

fn inner_integral(c: &mut Criterion) {
    let (crit, theta) = location_scale_criterion(0.5);
    let alpha = ParamVector::new(vec![0.0, 1.0]);
    c.bench_function("inner_integral_quadrature/location_scale", |b| {
        b.iter(|| crit.inner_integral_quadrature(black_box(&theta), black_box(&alpha)).unwrap())
    });
}

fn sampler(c: &mut Criterion) {
    let post = location_posterior(0.5, 500);
    let cfg = SamplerConfig { steps: 2000, burn_in: 500, ..SamplerConfig::with_crude_scale(&[0.045]) };
    c.bench_function("run_chain/2000_steps_n500", |b| {
        b.iter(|| run_chain(&|a: &[f64]| post.log_unnormalized(a), post.escort(), &cfg, black_box(3)).unwrap())
    });
}

fn sandwich(c: &mut Criterion) {
    let (crit, theta) = location_scale_criterion(0.5);
    let theta0 = ParamVector::new(vec![0.0, 1.0]);
    c.bench_function("compute_s/location_scale", |b| b.iter(|| compute_s(&crit, &theta, black_box(&theta0)).unwrap()));
    c.bench_function("compute_v/location_scale", |b| b.iter(|| compute_v(&crit, &theta, black_box(&theta0)).unwrap()));
}

criterion_group!(benches, log_posterior, inner_integral, sampler, sandwich);
criterion_main!(benches);
