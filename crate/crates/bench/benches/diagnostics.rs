use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use ngcheck::check::ref_gaussian;
use ngcheck::inference::{conditional_posterior_with, log_marginal};
use ngcheck::model::HyperParams;
use ngcheck::perturbation::{d_scores, i0_analytic, perturb_geometry, Direction};
use ngcheck::samplers::stream_rng;
use ngcheck::simstudy::{rw1_model, simulate_rw1_data};

fn rw1(n: usize) -> (ngcheck::model::GaussianLGM, HyperParams) {
    let (_, y) = simulate_rw1_data(n, 1.0, 0.0, 1.0, &mut stream_rng(1, 0)).unwrap();
    (rw1_model(y).unwrap(), HyperParams::new(1.0).with("sigma_w", 1.0))
}

fn diagnostics(c: &mut Criterion) {
    let mut group = c.benchmark_group("rw1");
    group.sample_size(10);
    for n in [200usize, 1000] {
        let (m, hp) = rw1(n);
        let s = m.structure(&hp).unwrap();
        let post = conditional_posterior_with(&m, &hp, &s).unwrap();
        let g = perturb_geometry(&post, &s).unwrap();
        group.bench_with_input(BenchmarkId::new("log_marginal", n), &n, |b, _| b.iter(|| log_marginal(&m, black_box(&hp)).unwrap()));
        group.bench_with_input(BenchmarkId::new("geometry", n), &n, |b, _| b.iter(|| perturb_geometry(black_box(&post), &s).unwrap()));
        group.bench_with_input(BenchmarkId::new("d_scores", n), &n, |b, _| b.iter(|| d_scores(black_box(&g))));
        group.bench_with_input(BenchmarkId::new("reference_variance", n), &n, |b, _| b.iter(|| ref_gaussian(black_box(&g)).unwrap()));
        group.bench_with_input(BenchmarkId::new("i0", n), &n, |b, _| b.iter(|| i0_analytic(black_box(&g), Direction::Nig).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, diagnostics);
criterion_main!(benches);
