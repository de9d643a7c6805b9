//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use pfp_core::{check_conditions, CountLaw, DiscreteMeasure, ProblemSpec};
use rand::Rng;

/// Largest `E[N+m]E[T²]` accepted for randomized solver/Monte Carlo runs:
/// keeps depth-40 truncation bias below `0.8^40 ≈ 1e-4`.
pub const MAX_RATE: f64 = 0.8;

/// A count law with positive mean.
pub fn random_count<R: Rng>(rng: &mut R) -> CountLaw {
    loop {
        let n = any_count(rng);
        if mean_of(&n) > 0.0 {
            return n;
        }
    }
}

fn any_count<R: Rng>(rng: &mut R) -> CountLaw {
    match rng.random_range(0..5) {
        0 => CountLaw::degenerate(rng.random_range(2..=4)),
        1 => {
            let k = rng.random_range(2..=4);
            let mut pmf: Vec<(u64, f64)> = (0..k).map(|_| (rng.random_range(0..=5), rng.random_range(0.1..1.0))).collect();
            let total: f64 = pmf.iter().map(|e| e.1).sum();
            pmf.iter_mut().for_each(|e| e.1 /= total);
            CountLaw::pmf(pmf).unwrap()
        }
        2 => CountLaw::geometric1(rng.random_range(0.3..0.8)).unwrap(),
        3 => CountLaw::geometric0(rng.random_range(0.2..0.5)).unwrap(),
        _ => CountLaw::poisson(rng.random_range(1.5..4.0)).unwrap(),
    }
}

/// One to three atoms on `(0.05, 1)`, sometimes with an extra atom at zero.
pub fn random_shape<R: Rng>(rng: &mut R) -> DiscreteMeasure {
    let k = rng.random_range(1..=3);
    let mut atoms: Vec<(f64, f64)> = (0..k).map(|_| (rng.random_range(0.05..1.0), rng.random_range(0.1..1.0))).collect();
    if rng.random_bool(0.2) {
        atoms.push((0.0, rng.random_range(0.05..0.3)));
    }
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    atoms.iter_mut().for_each(|a| a.1 /= total);
    DiscreteMeasure::new(atoms).unwrap()
}

fn scaled_to_mean(t: &DiscreteMeasure, mean: f64) -> DiscreteMeasure {
    t.scale(mean / t.mean())
}

fn mean_of(n: &CountLaw) -> f64 {
    pfp_core::count_stats(n).mean
}

fn accept(p: ProblemSpec, max_rate: f64) -> Option<ProblemSpec> {
    let r = check_conditions(&p).ok()?;
    (r.satisfied && pfp_core::solver::contraction_rate(&p) <= max_rate).then_some(p)
}

/// A homogeneous instance satisfying the uniqueness conditions.
pub fn homogeneous<R: Rng>(rng: &mut R, max_rate: f64) -> ProblemSpec {
    loop {
        let n = random_count(rng);
        let t = scaled_to_mean(&random_shape(rng), 1.0 / mean_of(&n));
        let mu = rng.random_range(0.5..2.0);
        if let Some(p) = ProblemSpec::homogeneous(n, t, mu).ok().and_then(|p| accept(p, max_rate)) {
            return p;
        }
    }
}

pub fn floored<R: Rng>(rng: &mut R, max_rate: f64) -> ProblemSpec {
    loop {
        let m = rng.random_range(1..=2);
        let n = random_count(rng);
        let t = scaled_to_mean(&random_shape(rng), 1.0 / (mean_of(&n) + m as f64));
        let mu = rng.random_range(0.5..2.0);
        if let Some(p) = ProblemSpec::floored(m, n, t, mu).ok().and_then(|p| accept(p, max_rate)) {
            return p;
        }
    }
}

pub fn common_t<R: Rng>(rng: &mut R, max_rate: f64) -> ProblemSpec {
    loop {
        let n = random_count(rng);
        let t = scaled_to_mean(&random_shape(rng), 1.0 / mean_of(&n));
        let mu = rng.random_range(0.5..2.0);
        if let Some(p) = ProblemSpec::common_t(n, t, mu).ok().and_then(|p| accept(p, max_rate)) {
            return p;
        }
    }
}

pub fn random_b<R: Rng>(rng: &mut R) -> DiscreteMeasure {
    let k = rng.random_range(1..=3);
    let atoms: Vec<(f64, f64)> = (0..k).map(|_| (rng.random_range(0.0..2.0), rng.random_range(0.1..1.0))).collect();
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    DiscreteMeasure::new(atoms.into_iter().map(|(x, w)| (x, w / total)).collect()).unwrap()
}

pub fn nonhomogeneous<R: Rng>(rng: &mut R, max_rate: f64, common: bool) -> ProblemSpec {
    loop {
        let n = random_count(rng);
        let c = rng.random_range(0.3..0.85);
        let t = scaled_to_mean(&random_shape(rng), c / mean_of(&n));
        let b = random_b(rng);
        let p = if common {
            ProblemSpec::nonhomogeneous_common_t(n, t, b)
        } else {
            ProblemSpec::nonhomogeneous(n, t, b)
        };
        if let Some(p) = p.ok().and_then(|p| accept(p, max_rate)) {
            return p;
        }
    }
}

/// Random discrete law with positive mean: one to six atoms on `[0, 5]`.
pub fn random_measure<R: Rng>(rng: &mut R) -> DiscreteMeasure {
    loop {
        let k = rng.random_range(1..=6);
        let atoms: Vec<(f64, f64)> = (0..k)
            .map(|_| {
                let x = if rng.random_bool(0.15) { 0.0 } else { rng.random_range(0.0..5.0) };
                (x, rng.random_range(0.05..1.0))
            })
            .collect();
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        let m = DiscreteMeasure::new(atoms.into_iter().map(|(x, w)| (x, w / total)).collect()).unwrap();
        if m.mean() > 0.0 {
            return m;
        }
    }
}

/// `n` log-spaced points on `[lo, hi]`.
pub fn log_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi / lo).ln() * i as f64 / (n - 1) as f64).exp())
        .collect()
}
