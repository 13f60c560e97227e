use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use edtn_bench::{queue, scenario};
use edtn_core::links::{fit_gprs_curve, sweep_buffer};
use edtn_core::{negotiate, run, ChainCosts, ChannelQuality, GprsModel, NegotiationInputs};

fn bench_negotiate(c: &mut Criterion) {
    let costs = ChainCosts::default();
    let mut group = c.benchmark_group("negotiate");
    for len in [10u64, 100, 1000] {
        let q = queue(len);
        // enough for about half the queue
        let inputs =
            NegotiationInputs::new(367.0 * len as f64 / 2.0, 1e6, ChannelQuality::default());
        group.bench_with_input(BenchmarkId::from_parameter(len), &q, |b, q| {
            b.iter(|| negotiate(black_box(&inputs), black_box(q), &costs, 0.2))
        });
    }
    group.finish();
}

fn bench_gprs(c: &mut Criterion) {
    let gprs = GprsModel::default();
    c.bench_function("sweep_buffer 1..200", |b| {
        b.iter(|| sweep_buffer(black_box(&gprs), 1, 200))
    });
    let samples: Vec<(u64, f64)> = (1..=200)
        .map(|b| (b, gprs.energy_per_packet(b).unwrap()))
        .collect();
    c.bench_function("fit_gprs_curve 200", |b| {
        b.iter(|| fit_gprs_curve(black_box(&samples)))
    });
}

fn bench_sim(c: &mut Criterion) {
    let mut group = c.benchmark_group("run");
    for name in ["paper-single-bundle", "lossy-multi-contact"] {
        let s = scenario(name);
        group.bench_function(name, |b| b.iter(|| run(black_box(&s), 0)));
    }
    group.finish();
}

criterion_group!(benches, bench_negotiate, bench_gprs, bench_sim);
criterion_main!(benches);
