use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cvd_core::decompose::{decompose, decompose_sequential};
use cvd_core::simulate::{builtin, generate, true_models};

fn bench_decompose(c: &mut Criterion) {
    let scenario = builtin("j10-binary").unwrap();
    let models = true_models(&scenario).unwrap();
    let mut group = c.benchmark_group("decompose");
    for &n in &[1_000usize, 10_000, 50_000] {
        let dataset = generate(&scenario, n, 99).unwrap();
        group.bench_with_input(BenchmarkId::new("parallel", n), &dataset, |b, d| {
            b.iter(|| decompose(d, &models).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &dataset, |b, d| {
            b.iter(|| decompose_sequential(d, &models).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_decompose);
criterion_main!(benches);
