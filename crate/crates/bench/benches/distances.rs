use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use repsim::{distance_matrix, gulp, gulp_kernel, gulp_pairwise, Kernel, MetricId, MomentSet};
use repsim_bench::{collection, pair};

fn bench_gulp(c: &mut Criterion) {
    let mut group = c.benchmark_group("gulp");
    for k in [10, 50, 200] {
        let (a, b) = pair(2000, k, 1);
        group.bench_with_input(BenchmarkId::new("moments+trace", k), &k, |bench, _| {
            bench.iter(|| {
                let m = MomentSet::new(&a, &b).unwrap();
                black_box(gulp(&m, 1e-2).unwrap())
            })
        });
    }
    group.finish();
}

fn bench_routes(c: &mut Criterion) {
    let mut group = c.benchmark_group("routes");
    group.sample_size(10);
    for n in [250, 500] {
        let (a, b) = pair(n, 20, 2);
        group.bench_with_input(BenchmarkId::new("pairwise", n), &n, |bench, _| {
            bench.iter(|| black_box(gulp_pairwise(&a, &b, 1e-2).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("kernel_linear", n), &n, |bench, _| {
            bench.iter(|| black_box(gulp_kernel(&a, &b, 1e-2, Kernel::Linear).unwrap()))
        });
    }
    group.finish();
}

fn bench_distance_matrix(c: &mut Criterion) {
    let reps = collection(12, 1000, 16);
    c.bench_function("distance_matrix/12x1000x16", |bench| {
        bench.iter(|| black_box(distance_matrix(&reps, MetricId::gulp(1e-2)).unwrap()))
    });
}

criterion_group!(benches, bench_gulp, bench_routes, bench_distance_matrix);
criterion_main!(benches);
