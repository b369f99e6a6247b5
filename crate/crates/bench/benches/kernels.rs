use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use trman_bench::{tr_fixture, utr_fixture};
use trman_core::completion::{euclidean_gradient, objective, utr_euclidean_gradient};
use trman_core::geometry::project;
use trman_core::optim::{rcg, OptimConfig};
use trman_core::tr::tr_full;
use trman_core::utr_geometry::{u_project, UtrTangent};

fn reconstruction(c: &mut Criterion) {
    let mut g = c.benchmark_group("tr_full");
    for n in [10, 30, 50] {
        let (_, u) = tr_fixture(n, 2, 100, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &u, |b, u| b.iter(|| tr_full(black_box(u)).unwrap()));
    }
    g.finish();
}

fn gradients(c: &mut Criterion) {
    let mut g = c.benchmark_group("gradient");
    for r in [2, 4] {
        let (p, u) = tr_fixture(30, r, 8100, 2);
        g.bench_with_input(BenchmarkId::new("objective", r), &u, |b, u| b.iter(|| objective(&p, black_box(u))));
        g.bench_with_input(BenchmarkId::new("tr", r), &u, |b, u| b.iter(|| euclidean_gradient(&p, black_box(u))));
        let (pu, cu) = utr_fixture(30, r, 8100, 3);
        g.bench_with_input(BenchmarkId::new("utr", r), &cu, |b, c| {
            b.iter(|| utr_euclidean_gradient(&pu, black_box(c)))
        });
    }
    g.finish();
}

fn projections(c: &mut Criterion) {
    let mut g = c.benchmark_group("projection");
    for r in [2, 4, 8] {
        let (p, u) = tr_fixture(30, r, 2000, 4);
        let v = euclidean_gradient(&p, &u);
        g.bench_with_input(BenchmarkId::new("tr", r), &u, |b, u| b.iter(|| project(black_box(u), &v).unwrap()));
        let (pu, cu) = utr_fixture(30, r, 2000, 5);
        let w: UtrTangent = utr_euclidean_gradient(&pu, &cu);
        g.bench_with_input(BenchmarkId::new("utr", r), &cu, |b, c| b.iter(|| u_project(black_box(c), &w).unwrap()));
    }
    g.finish();
}

fn optimizer(c: &mut Criterion) {
    let (p, u0) = tr_fixture(30, 2, 8100, 6);
    let cfg = OptimConfig { max_iters: 10, ..OptimConfig::default() };
    let mut g = c.benchmark_group("rcg");
    g.sample_size(10);
    g.bench_function("10_iterations_n30", |b| b.iter(|| rcg(black_box(u0.clone()), &p, &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, reconstruction, gradients, projections, optimizer);
criterion_main!(benches);
