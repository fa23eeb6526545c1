use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use emos_core::{crps_empirical, crps_gaussian, EmpiricalPredictive, GaussianPredictive};

fn crps(c: &mut Criterion) {
    let g = GaussianPredictive::new(288.0, 1.7).unwrap();
    c.bench_function("crps_gaussian", |b| b.iter(|| crps_gaussian(black_box(&g), black_box(289.3))));

    let mut group = c.benchmark_group("crps_empirical");
    for m in [10, 50, 250] {
        let e = EmpiricalPredictive::new((0..m).map(|i| 288.0 + ((i * 37) % m) as f64 / m as f64)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(m), &e, |b, e| {
            b.iter(|| crps_empirical(black_box(e), black_box(288.4)))
        });
    }
    group.finish();
}

criterion_group!(benches, crps);
criterion_main!(benches);
