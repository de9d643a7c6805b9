//! Monte Carlo oracle: finite-depth sampling of the weighted branching
//! recursion, and a one-sided stable sampler.
//!
//! A sample expands the right-hand side recursively. Nodes at the depth limit
//! are replaced by the constant `μ₁`, which keeps the mean exact at every
//! depth; the variance bias then shrinks by `E[N+m]E[T²]` per level.
//!
//! Nodes whose accumulated weight falls to `weight_floor` or below are
//! resolved early by a draw from the two-atom law with the solution's first
//! two moments. Because the moment recursions only see the first two moments
//! of the leaves, this leaves both `E[X]` and `E[X²]` of the estimator
//! unchanged while bounding the work per sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Geometric, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::ProblemSpec;
use crate::error::{Error, Result};
use crate::measures::{eckberg_two_atom, kahan_sum, CountLaw, DiscreteMeasure, MomentPair};
use crate::solver::closed_form_moments;

pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub n_samples: usize,
    pub depth: usize,
    pub mean_hat: f64,
    pub var_hat: f64,
    pub se_mean: f64,
    pub se_var: f64,
    pub seed: u64,
}

/// Inverse-cdf sampler for a [`DiscreteMeasure`].
#[derive(Debug, Clone)]
pub struct AtomSampler {
    locs: Vec<f64>,
    cdf: Vec<f64>,
}

impl AtomSampler {
    pub fn new(m: &DiscreteMeasure) -> Self {
        let mut acc = 0.0;
        let mut cdf = Vec::with_capacity(m.len());
        for &(_, w) in m.atoms() {
            acc += w;
            cdf.push(acc);
        }
        let total = acc;
        for c in &mut cdf {
            *c /= total;
        }
        AtomSampler { locs: m.atoms().iter().map(|a| a.0).collect(), cdf }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|&c| c <= u).min(self.locs.len() - 1);
        self.locs[i]
    }
}

enum CountSampler {
    Fixed(u64),
    Table { ks: Vec<u64>, cdf: Vec<f64> },
    Geometric { dist: Geometric, shift: u64 },
    Poisson(Poisson<f64>),
}

impl CountSampler {
    fn new(n: &CountLaw) -> Self {
        match n {
            CountLaw::Degenerate { k } => CountSampler::Fixed(*k),
            CountLaw::Pmf { pmf } => {
                let mut acc = 0.0;
                let cdf = pmf.iter().map(|e| {
                    acc += e.1;
                    acc
                });
                let cdf: Vec<f64> = cdf.collect();
                let total = *cdf.last().unwrap_or(&1.0);
                CountSampler::Table {
                    ks: pmf.iter().map(|e| e.0).collect(),
                    cdf: cdf.into_iter().map(|c| c / total).collect(),
                }
            }
            CountLaw::Geometric1 { p } => CountSampler::Geometric {
                dist: Geometric::new(*p).expect("validated p"),
                shift: 1,
            },
            CountLaw::Geometric0 { p } => CountSampler::Geometric {
                dist: Geometric::new(*p).expect("validated p"),
                shift: 0,
            },
            CountLaw::Poisson { lambda } => CountSampler::Poisson(Poisson::new(*lambda).expect("validated lambda")),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            CountSampler::Fixed(k) => *k,
            CountSampler::Table { ks, cdf } => {
                let u: f64 = rng.random();
                ks[cdf.partition_point(|&c| c <= u).min(ks.len() - 1)]
            }
            CountSampler::Geometric { dist, shift } => dist.sample(rng) + shift,
            CountSampler::Poisson(d) => d.sample(rng) as u64,
        }
    }
}

/// Precomputed samplers for one problem.
pub struct BranchingSampler {
    p: ProblemSpec,
    n: CountSampler,
    t: AtomSampler,
    b: Option<AtomSampler>,
    mu1: f64,
    leaf: Option<AtomSampler>,
    weight_floor: f64,
}

impl BranchingSampler {
    pub fn new(p: &ProblemSpec, weight_floor: f64) -> Self {
        let leaf = closed_form_moments(p)
            .ok()
            .and_then(|r| MomentPair::new(r.mu1, r.mu2).ok())
            .and_then(|mp| eckberg_two_atom(mp).ok())
            .map(|m| AtomSampler::new(&m));
        BranchingSampler {
            n: CountSampler::new(&p.n),
            t: AtomSampler::new(&p.t),
            b: p.b.as_ref().filter(|_| p.kind.is_nonhomogeneous()).map(AtomSampler::new),
            mu1: p.target_mean(),
            leaf,
            weight_floor,
            p: p.clone(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, depth: usize, rng: &mut R) -> f64 {
        let m = self.p.floor();
        let common = self.p.kind.is_common_t();
        let mut total = 0.0;
        let mut stack: Vec<(f64, usize)> = vec![(1.0, 0)];
        while let Some((w, level)) = stack.pop() {
            if w == 0.0 {
                continue;
            }
            if level >= depth {
                total += w * self.mu1;
                continue;
            }
            if w <= self.weight_floor {
                if let Some(leaf) = &self.leaf {
                    total += w * leaf.sample(rng);
                    continue;
                }
            }
            if let Some(b) = &self.b {
                total += w * b.sample(rng);
            }
            let k = self.n.sample(rng) + m;
            if common {
                let t = self.t.sample(rng);
                for _ in 0..k {
                    stack.push((w * t, level + 1));
                }
            } else {
                for _ in 0..k {
                    stack.push((w * self.t.sample(rng), level + 1));
                }
            }
        }
        total
    }
}

/// One draw of the depth-truncated recursion.
pub fn sample_once<R: Rng + ?Sized>(p: &ProblemSpec, depth: usize, rng: &mut R) -> f64 {
    BranchingSampler::new(p, DEFAULT_WEIGHT_FLOOR).sample(depth, rng)
}

/// Stream `i` of the counter-based generator seeded by `seed`.
pub fn stream_rng(seed: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    rng
}

/// Draws `n` values, sample `i` from stream `i`. Order and values do not
/// depend on how the work is split across threads.
pub fn draw_samples<F>(n: usize, seed: u64, f: F) -> Vec<f64>
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|i| f(&mut stream_rng(seed, i)))
        .collect()
}

/// Mean, variance and their standard errors of `xs`.
pub fn summarize(xs: &[f64], depth: usize, seed: u64) -> McReport {
    let n = xs.len() as f64;
    let mean = kahan_sum(xs.iter().copied()) / n;
    let m2 = kahan_sum(xs.iter().map(|x| (x - mean).powi(2))) / n;
    let m4 = kahan_sum(xs.iter().map(|x| (x - mean).powi(4))) / n;
    let var = m2 * n / (n - 1.0);
    McReport {
        n_samples: xs.len(),
        depth,
        mean_hat: mean,
        var_hat: var,
        se_mean: (var / n).sqrt(),
        se_var: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
        seed,
    }
}

pub fn mc_estimate(p: &ProblemSpec, n_samples: usize, depth: usize, seed: u64) -> Result<McReport> {
    mc_estimate_with(p, n_samples, depth, seed, DEFAULT_WEIGHT_FLOOR)
}

pub fn mc_estimate_with(
    p: &ProblemSpec,
    n_samples: usize,
    depth: usize,
    seed: u64,
    weight_floor: f64,
) -> Result<McReport> {
    if n_samples < 2 {
        return Err(Error::SpecInvalid(format!("need at least 2 samples, got {n_samples}")));
    }
    let sampler = BranchingSampler::new(p, weight_floor);
    let xs = draw_samples(n_samples, seed, |rng| sampler.sample(depth, rng));
    Ok(summarize(&xs, depth, seed))
}

/// Positive stable variable with transform `e^{-s^α}`, from one uniform on
/// `(0, π)` and one unit exponential.
pub fn sample_positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let u = loop {
        let u: f64 = rng.random::<f64>() * std::f64::consts::PI;
        if u > 0.0 {
            break u;
        }
    };
    let e: f64 = Exp1.sample(rng);
    let a = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * u).sin() / e).powf((1.0 - alpha) / alpha);
    Ok(a * b)
}

/// Empirical transform `mean(e^{-s x})` and its standard error.
pub fn empirical_lst(xs: &[f64], s: f64) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = kahan_sum(xs.iter().map(|&x| (-s * x).exp())) / n;
    let var = kahan_sum(xs.iter().map(|&x| ((-s * x).exp() - mean).powi(2))) / (n - 1.0);
    (mean, (var / n).sqrt())
}
