use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kw_bench::{bump, dirichlet_data};
use kw_lattice::convolution::convolve;
use kw_lattice::linear_dirichlet::DirichletSolver;
use kw_lattice::source_solver::solve_source;
use kw_lattice::{build_greens_table, IterationOptions, SourceProblem, TruncatedDomain};

fn table_build(c: &mut Criterion) {
    let mut g = c.benchmark_group("greens_table");
    g.sample_size(10);
    g.bench_function("build_r64_q512", |b| b.iter(|| build_greens_table(black_box(64), 512).unwrap()));
    g.finish();
}

fn fft_convolution(c: &mut Criterion) {
    let t = build_greens_table(128, 512).unwrap();
    let mut g = c.benchmark_group("convolution");
    for r in [32u32, 128] {
        let f = bump(r);
        g.bench_function(format!("fft_r{r}"), |b| b.iter(|| convolve(&t, black_box(&f))));
    }
    g.finish();
}

fn dirichlet(c: &mut Criterion) {
    let mut g = c.benchmark_group("dirichlet");
    g.sample_size(10);
    for r in [60u32, 150] {
        let d = TruncatedDomain::euclidean(r).unwrap();
        let (rhs, bnd) = dirichlet_data(&d);
        let shift = vec![0.1; d.n_interior()];
        let solver = DirichletSolver::new(d, Some(shift)).unwrap();
        let path = if solver.is_direct() { "band_cholesky" } else { "multigrid_pcg" };
        g.bench_function(format!("{path}_r{r}"), |b| {
            b.iter(|| solver.solve(black_box(&rhs), &bnd, None, 1e-10).unwrap())
        });
    }
    g.finish();
}

fn regular_solve(c: &mut Criterion) {
    let t = build_greens_table(128, 512).unwrap();
    let opts = IterationOptions::default();
    let p = SourceProblem::from_sigma(0.5, 4.0, 0.0, 48);
    let mut g = c.benchmark_group("regular_solve");
    g.sample_size(10);
    g.bench_function("source_sigma4_r48", |b| b.iter(|| solve_source(black_box(&p), &t, &opts).unwrap()));
    g.finish();
}

criterion_group!(benches, table_build, fft_convolution, dirichlet, regular_solve);
criterion_main!(benches);
