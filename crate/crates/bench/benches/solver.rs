use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use selfdual::hilbert::expm;
use selfdual::solver::SolveOptions;
use selfdual_bench::{problem, schrodinger_generator, wavy_path};

fn exponential(c: &mut Criterion) {
    let mut group = c.benchmark_group("expm");
    for n in [8, 16, 32] {
        let g = schrodinger_generator(n).unwrap() * 0.05;
        group.bench_with_input(BenchmarkId::from_parameter(2 * n), &g, |b, g| b.iter(|| expm(black_box(g))));
    }
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("value_and_gradient");
    for name in ["gl_skew", "ham_bilaplacian", "nls_cubic"] {
        let p = problem(name, 16, 64).unwrap();
        let path = wavy_path(&p);
        group.bench_function(name, |b| b.iter(|| p.functional.value_and_gradient(black_box(&path))));
    }
    group.finish();
}

fn solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    let opts = SolveOptions { restarts: 0, ..Default::default() };
    for name in ["gl_skew", "gl_advection", "nls_cubic"] {
        let p = problem(name, 16, 32).unwrap();
        group.bench_function(name, |b| b.iter(|| p.solve(&opts).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, exponential, gradient, solve);
criterion_main!(benches);
