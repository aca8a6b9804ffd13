use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::Rng as _;
use supremix::analysis::compute_nlfd;
use supremix::rng;

fn nlfd(c: &mut Criterion) {
    let mut group = c.benchmark_group("compute_nlfd");
    group.sample_size(20);
    for n in [500, 2000] {
        let mut r = rng::stream(5);
        let x = Array2::from_shape_fn((n, 8), |_| r.random_range(-1.0..1.0));
        let t: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| compute_nlfd(&x, &t).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, nlfd);
criterion_main!(benches);
