use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pfp_core::measures::enforce_cap;
use pfp_core::solver::{picard_step_curve, picard_step_measure};
use pfp_core::{
    eckberg_two_atom, mc_estimate, solve, weighted_sum_law, AtomBudget, Backend, CountLaw, DiscreteMeasure, LogGrid,
    LstCurve, MomentPair, ProblemSpec, SolveOptions,
};

fn exponential(p: f64) -> ProblemSpec {
    ProblemSpec::homogeneous(CountLaw::geometric1(p).unwrap(), DiscreteMeasure::dirac(p).unwrap(), 1.0).unwrap()
}

/// N ≡ 2, T uniform on {0.3, 0.7}.
fn two_weights() -> ProblemSpec {
    let t = DiscreteMeasure::new(vec![(0.3, 0.5), (0.7, 0.5)]).unwrap();
    ProblemSpec::homogeneous(CountLaw::degenerate(2), t, 1.0).unwrap()
}

fn picard(c: &mut Criterion) {
    let mut g = c.benchmark_group("picard_step");
    let p = exponential(0.5);
    for n in [129usize, 513, 2049] {
        let grid = LogGrid::new(1e-3, 1e3, n).unwrap();
        let mp = MomentPair::new(1.0, 2.0).unwrap();
        let start = LstCurve::from_source(grid.clone(), &eckberg_two_atom(mp).unwrap()).unwrap();
        g.bench_with_input(BenchmarkId::new("grid", n), &start, |b, cur| {
            b.iter(|| picard_step_curve(&p, cur, &grid).unwrap())
        });
    }
    let p = two_weights();
    let mut cur = eckberg_two_atom(MomentPair::new(1.0, 1.2).unwrap()).unwrap();
    let budget = AtomBudget::default();
    for _ in 0..8 {
        cur = picard_step_measure(&p, &cur, &budget).unwrap().0;
    }
    g.bench_function(BenchmarkId::new("discrete", cur.len()), |b| {
        b.iter(|| picard_step_measure(&p, black_box(&cur), &budget).unwrap())
    });
    g.finish();
}

fn arithmetic(c: &mut Criterion) {
    let mut g = c.benchmark_group("measures");
    let t = DiscreteMeasure::new(vec![(0.3, 0.5), (0.7, 0.5)]).unwrap();
    let x = DiscreteMeasure::new((1..=64).map(|i| (i as f64 / 32.0, 1.0 / 64.0)).collect()).unwrap();
    let n = CountLaw::degenerate(3);
    g.bench_function("weighted_sum_n3_64atoms", |b| {
        b.iter(|| weighted_sum_law(&t, black_box(&x), &n, 0, None, false).unwrap())
    });
    let big = weighted_sum_law(&t, &x, &n, 0, None, false).unwrap();
    g.bench_function(BenchmarkId::new("enforce_cap_1000", big.len()), |b| {
        b.iter(|| enforce_cap(black_box(&big), 1000, 1e-12))
    });
    g.finish();
}

fn end_to_end(c: &mut Criterion) {
    let mut g = c.benchmark_group("end_to_end");
    g.sample_size(10);
    let p = exponential(0.5);
    g.bench_function("solve_exponential_grid", |b| b.iter(|| solve(&p, &SolveOptions::default()).unwrap()));
    let p = two_weights();
    let opts = SolveOptions { backend: Backend::Grid, ..SolveOptions::default() };
    g.bench_function("solve_two_weights_grid", |b| b.iter(|| solve(&p, &opts).unwrap()));
    let p = exponential(0.5);
    g.bench_function("mc_exponential_10k", |b| b.iter(|| mc_estimate(&p, 10_000, 40, 1).unwrap()));
    g.finish();
}

criterion_group!(benches, picard, arithmetic, end_to_end);
criterion_main!(benches);
