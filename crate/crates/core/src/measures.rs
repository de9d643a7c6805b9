//! Finite discrete probability measures on `[0, ∞)` and offspring count laws.
//!
//! [`DiscreteMeasure`] carries the laws of the weight `T`, the immigration
//! term `B`, and the discrete Picard iterates. Everything here is exact
//! arithmetic on atom lists except [`merge_atoms`], which trades a bounded,
//! reported loss of second moment for a smaller support.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass accepted by [`DiscreteMeasure::new`].
pub const MASS_INPUT_TOL: f64 = 1e-9;

/// Default cap on the number of atoms kept between Picard steps.
pub const DEFAULT_ATOM_CAP: usize = 20_000;

/// Default bound on `|a| * |b|` for a single convolution.
pub const DEFAULT_PAIR_BUDGET: usize = 4_000_000;

/// A probability measure with finitely many atoms on `[0, ∞)`.
///
/// Atoms are kept sorted by strictly increasing location, every mass is
/// positive and the masses sum to one (renormalized on construction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct DiscreteMeasure {
    atoms: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for DiscreteMeasure {
    type Error = Error;

    fn try_from(atoms: Vec<(f64, f64)>) -> Result<Self> {
        DiscreteMeasure::new(atoms)
    }
}

impl From<DiscreteMeasure> for Vec<(f64, f64)> {
    fn from(m: DiscreteMeasure) -> Self {
        m.atoms
    }
}

impl DiscreteMeasure {
    /// Builds a measure from `(location, mass)` pairs in any order.
    ///
    /// Duplicate locations are merged and the result is renormalized so the
    /// masses sum to one to machine precision.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let mut total = 0.0;
        for &(loc, mass) in &atoms {
            if !(loc >= 0.0) || !loc.is_finite() {
                return Err(Error::NegativeLocation(loc));
            }
            if !(mass > 0.0) || !mass.is_finite() {
                return Err(Error::NonPositiveMass(mass));
            }
            total += mass;
        }
        if atoms.is_empty() || (total - 1.0).abs() > MASS_INPUT_TOL {
            return Err(Error::MassNotNormalized(total));
        }
        let mut m = Self::from_unsorted(atoms);
        m.renormalize();
        Ok(m)
    }

    /// Point mass at `loc`.
    pub fn dirac(loc: f64) -> Result<Self> {
        Self::new(vec![(loc, 1.0)])
    }

    /// Sorts, merges exact duplicates and drops zero masses. Callers
    /// guarantee nonnegative locations and nonnegative masses summing to one
    /// up to rounding; the rounding is removed here, since repeated
    /// convolution would otherwise raise it to ever higher powers.
    pub(crate) fn from_unsorted(mut atoms: Vec<(f64, f64)>) -> Self {
        atoms.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (loc, mass) in atoms {
            if mass <= 0.0 {
                continue;
            }
            match out.last_mut() {
                Some(last) if last.0 == loc => last.1 += mass,
                _ => out.push((loc, mass)),
            }
        }
        let mut m = DiscreteMeasure { atoms: out };
        m.renormalize();
        m
    }

    /// Divides by the total mass unless it is already one to a few ulps, so
    /// that renormalizing a normalized measure leaves it bit-identical.
    fn renormalize(&mut self) {
        let total = kahan_sum(self.atoms.iter().map(|a| a.1));
        if (total - 1.0).abs() > 4.0 * f64::EPSILON {
            for a in &mut self.atoms {
                a.1 /= total;
            }
        }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        kahan_sum(self.atoms.iter().map(|a| a.1))
    }

    /// `E[X^k]` with the convention `0^0 = 1`. Fractional `k` is allowed.
    pub fn moment(&self, k: f64) -> f64 {
        moment(self, k)
    }

    pub fn mean(&self) -> f64 {
        self.moment(1.0)
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        kahan_sum(self.atoms.iter().map(|&(x, w)| w * (x - mu) * (x - mu)))
    }

    /// `Pr(X > 0)`.
    pub fn prob_positive(&self) -> f64 {
        kahan_sum(self.atoms.iter().filter(|a| a.0 > 0.0).map(|a| a.1))
    }

    /// `E[X^a log X]` with `0 log 0 = 0`.
    pub fn moment_log(&self, a: f64) -> f64 {
        kahan_sum(
            self.atoms
                .iter()
                .filter(|a| a.0 > 0.0)
                .map(|&(x, w)| w * x.powf(a) * x.ln()),
        )
    }

    pub fn is_degenerate(&self) -> bool {
        self.atoms.len() == 1
    }

    pub fn max_location(&self) -> f64 {
        self.atoms.last().map_or(0.0, |a| a.0)
    }

    /// Law of `c X` for `c >= 0`.
    pub fn scale(&self, c: f64) -> DiscreteMeasure {
        assert!(c >= 0.0 && c.is_finite(), "scale factor must be finite and >= 0");
        if c == 0.0 {
            return DiscreteMeasure { atoms: vec![(0.0, 1.0)] };
        }
        DiscreteMeasure {
            atoms: self.atoms.iter().map(|&(x, w)| (c * x, w)).collect(),
        }
    }
}

/// `Σ mass · location^k`, with `0^0 = 1`.
pub fn moment(m: &DiscreteMeasure, k: f64) -> f64 {
    if k == 0.0 {
        return m.total_mass();
    }
    let int_k = k.fract() == 0.0 && k.abs() < i32::MAX as f64;
    kahan_sum(m.atoms.iter().map(|&(x, w)| {
        if int_k {
            w * x.powi(k as i32)
        } else {
            w * x.powf(k)
        }
    }))
}

/// Length-biased law `t dF(t) / E[T]`. Atoms at zero carry no mass and drop.
pub fn length_biased(t: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    let mean = t.mean();
    if !(mean > 0.0) {
        return Err(Error::ZeroMean);
    }
    let atoms = t
        .atoms
        .iter()
        .filter(|a| a.0 > 0.0)
        .map(|&(x, w)| (x, x * w / mean))
        .collect();
    let mut out = DiscreteMeasure { atoms };
    out.renormalize();
    Ok(out)
}

/// First two moments of a nonnegative law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPair {
    pub mu1: f64,
    pub mu2: f64,
}

impl MomentPair {
    /// Validates `mu2 >= mu1^2 > 0`. A relative shortfall below `1e-12`
    /// is treated as roundoff and clamped to `mu1^2`.
    pub fn new(mu1: f64, mu2: f64) -> Result<Self> {
        if !(mu1 > 0.0) || !mu1.is_finite() || !mu2.is_finite() {
            return Err(Error::InvalidMoments { mu1, mu2 });
        }
        let sq = mu1 * mu1;
        if mu2 < sq {
            if mu2 >= sq * (1.0 - 1e-12) {
                return Ok(MomentPair { mu1, mu2: sq });
            }
            return Err(Error::InvalidMoments { mu1, mu2 });
        }
        Ok(MomentPair { mu1, mu2 })
    }

    pub fn variance(&self) -> f64 {
        self.mu2 - self.mu1 * self.mu1
    }

    /// Mean of the first-order equilibrium law, `mu2 / (2 mu1)`.
    pub fn equilibrium_mean(&self) -> f64 {
        self.mu2 / (2.0 * self.mu1)
    }
}

/// Two-atom law attaining the Eckberg upper bound for the given moments.
pub fn eckberg_two_atom(mp: MomentPair) -> Result<DiscreteMeasure> {
    let MomentPair { mu1, mu2 } = MomentPair::new(mp.mu1, mp.mu2)?;
    let q = mu1 * mu1 / mu2;
    if q >= 1.0 {
        return Ok(DiscreteMeasure { atoms: vec![(mu1, 1.0)] });
    }
    Ok(DiscreteMeasure {
        atoms: vec![(0.0, 1.0 - q), (mu2 / mu1, q)],
    })
}

/// Distribution of the number of summands `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CountLaw {
    Degenerate { k: u64 },
    /// Explicit probabilities `(k, Pr(N = k))`.
    Pmf { pmf: Vec<(u64, f64)> },
    /// Geometric on `{1, 2, ...}`: `Pr(N = k) = p (1 - p)^(k - 1)`.
    Geometric1 { p: f64 },
    /// Geometric on `{0, 1, ...}`: `Pr(N = k) = p (1 - p)^k`.
    Geometric0 { p: f64 },
    Poisson { lambda: f64 },
}

/// `E[N]`, `Var(N)`, `E[N(N-1)]`, `E[N^2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountStats {
    pub mean: f64,
    pub variance: f64,
    pub factorial2: f64,
    pub second_moment: f64,
}

impl CountLaw {
    pub fn degenerate(k: u64) -> Self {
        CountLaw::Degenerate { k }
    }

    /// Explicit pmf. Duplicate `k` are merged, zero masses dropped and the
    /// result renormalized.
    pub fn pmf(pmf: Vec<(u64, f64)>) -> Result<Self> {
        let law = CountLaw::Pmf { pmf };
        law.validate()?;
        let CountLaw::Pmf { mut pmf } = law else { unreachable!() };
        pmf.sort_by_key(|e| e.0);
        let mut merged: Vec<(u64, f64)> = Vec::with_capacity(pmf.len());
        for (k, w) in pmf {
            if w == 0.0 {
                continue;
            }
            match merged.last_mut() {
                Some(last) if last.0 == k => last.1 += w,
                _ => merged.push((k, w)),
            }
        }
        let total = kahan_sum(merged.iter().map(|e| e.1));
        for e in &mut merged {
            e.1 /= total;
        }
        Ok(CountLaw::Pmf { pmf: merged })
    }

    pub fn geometric1(p: f64) -> Result<Self> {
        let law = CountLaw::Geometric1 { p };
        law.validate().map(|_| law)
    }

    pub fn geometric0(p: f64) -> Result<Self> {
        let law = CountLaw::Geometric0 { p };
        law.validate().map(|_| law)
    }

    pub fn poisson(lambda: f64) -> Result<Self> {
        let law = CountLaw::Poisson { lambda };
        law.validate().map(|_| law)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CountLaw::Degenerate { .. } => Ok(()),
            CountLaw::Pmf { pmf } => {
                if pmf.is_empty() {
                    return Err(Error::InvalidCountLaw("empty pmf".into()));
                }
                if let Some(&(k, w)) = pmf.iter().find(|e| !(e.1 >= 0.0) || !e.1.is_finite()) {
                    return Err(Error::InvalidCountLaw(format!("Pr(N = {k}) = {w} is invalid")));
                }
                let total = kahan_sum(pmf.iter().map(|e| e.1));
                if (total - 1.0).abs() > MASS_INPUT_TOL {
                    return Err(Error::InvalidCountLaw(format!("pmf sums to {total}")));
                }
                Ok(())
            }
            CountLaw::Geometric1 { p } | CountLaw::Geometric0 { p } => {
                if *p > 0.0 && *p < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidCountLaw(format!("geometric p = {p} outside (0, 1)")))
                }
            }
            CountLaw::Poisson { lambda } => {
                if *lambda > 0.0 && lambda.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidCountLaw(format!("poisson lambda = {lambda} must be > 0")))
                }
            }
        }
    }

    /// Finite support as `(k, Pr(N = k))`, or `None` for infinite-support
    /// families.
    pub fn finite_support(&self) -> Option<Vec<(u64, f64)>> {
        match self {
            CountLaw::Degenerate { k } => Some(vec![(*k, 1.0)]),
            CountLaw::Pmf { pmf } => Some(pmf.iter().copied().filter(|e| e.1 > 0.0).collect()),
            _ => None,
        }
    }

    pub fn max_value(&self) -> Option<u64> {
        self.finite_support().and_then(|s| s.iter().map(|e| e.0).max())
    }

    /// `Pr(N = 0)`.
    pub fn prob_zero(&self) -> f64 {
        match self {
            CountLaw::Degenerate { k } => (*k == 0) as u8 as f64,
            CountLaw::Pmf { pmf } => pmf.iter().filter(|e| e.0 == 0).map(|e| e.1).sum(),
            CountLaw::Geometric1 { .. } => 0.0,
            CountLaw::Geometric0 { p } => *p,
            CountLaw::Poisson { lambda } => (-lambda).exp(),
        }
    }

    /// `E[N log⁺ N]`, summed to machine precision for infinite families.
    pub fn mean_nlogn(&self) -> f64 {
        let term = |k: u64| if k >= 2 { k as f64 * (k as f64).ln() } else { 0.0 };
        match self.finite_support() {
            Some(s) => kahan_sum(s.iter().map(|&(k, w)| w * term(k))),
            None => {
                // past the mean the terms decay geometrically or faster
                let mean = count_stats(self).mean;
                let mut acc = 0.0;
                let mut k = 0u64;
                loop {
                    let w = self.pmf_at(k);
                    let v = w * term(k);
                    acc += v;
                    if (k as f64 > mean && w * term(k).max(1.0) < 1e-20 * acc.max(1.0)) || k >= 1_000_000 {
                        break;
                    }
                    k += 1;
                }
                acc
            }
        }
    }

    /// `Pr(N = k)`.
    pub fn pmf_at(&self, k: u64) -> f64 {
        match self {
            CountLaw::Degenerate { k: k0 } => (*k0 == k) as u8 as f64,
            CountLaw::Pmf { pmf } => pmf.iter().filter(|e| e.0 == k).map(|e| e.1).sum(),
            CountLaw::Geometric1 { p } => {
                if k == 0 {
                    0.0
                } else {
                    p * (1.0 - p).powf((k - 1) as f64)
                }
            }
            CountLaw::Geometric0 { p } => p * (1.0 - p).powf(k as f64),
            CountLaw::Poisson { lambda } => {
                let ln = -lambda + k as f64 * lambda.ln() - ln_factorial(k);
                ln.exp()
            }
        }
    }
}

fn ln_factorial(k: u64) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

/// Closed-form `E[N]`, `Var(N)`, `E[N(N-1)]`, `E[N^2]`.
pub fn count_stats(n: &CountLaw) -> CountStats {
    let (mean, variance) = match n {
        CountLaw::Degenerate { k } => (*k as f64, 0.0),
        CountLaw::Pmf { pmf } => {
            let mean = kahan_sum(pmf.iter().map(|&(k, w)| w * k as f64));
            let var = kahan_sum(pmf.iter().map(|&(k, w)| w * (k as f64 - mean).powi(2)));
            (mean, var)
        }
        CountLaw::Geometric1 { p } => (1.0 / p, (1.0 - p) / (p * p)),
        CountLaw::Geometric0 { p } => ((1.0 - p) / p, (1.0 - p) / (p * p)),
        CountLaw::Poisson { lambda } => (*lambda, *lambda),
    };
    let second_moment = variance + mean * mean;
    CountStats {
        mean,
        variance,
        factorial2: second_moment - mean,
        second_moment,
    }
}

/// Exact convolution (law of `X + Y` for independent `X ~ a`, `Y ~ b`).
pub fn convolve(a: &DiscreteMeasure, b: &DiscreteMeasure) -> DiscreteMeasure {
    if a.is_degenerate() {
        return shift(b, a.atoms[0].0);
    }
    if b.is_degenerate() {
        return shift(a, b.atoms[0].0);
    }
    let mut atoms = Vec::with_capacity(a.len() * b.len());
    for &(x, w) in &a.atoms {
        for &(y, v) in &b.atoms {
            atoms.push((x + y, w * v));
        }
    }
    DiscreteMeasure::from_unsorted(atoms)
}

fn shift(m: &DiscreteMeasure, c: f64) -> DiscreteMeasure {
    if c == 0.0 {
        return m.clone();
    }
    DiscreteMeasure::from_unsorted(m.atoms.iter().map(|&(x, w)| (x + c, w)).collect())
}

/// Finite mixture `Σ weight_i · m_i`; weights must sum to one.
pub fn mixture(parts: &[(f64, DiscreteMeasure)]) -> DiscreteMeasure {
    if let [(_, only)] = parts {
        return only.clone();
    }
    let atoms = parts
        .iter()
        .flat_map(|(w, m)| m.atoms.iter().map(move |&(x, v)| (x, w * v)))
        .collect();
    DiscreteMeasure::from_unsorted(atoms)
}

/// Law of `T X` for independent `T ~ t`, `X ~ x`.
pub fn product_law(t: &DiscreteMeasure, x: &DiscreteMeasure) -> DiscreteMeasure {
    let atoms = t
        .atoms
        .iter()
        .flat_map(|&(tv, tw)| x.atoms.iter().map(move |&(xv, xw)| (tv * xv, tw * xw)))
        .collect();
    DiscreteMeasure::from_unsorted(atoms)
}

/// Merges greedy runs of adjacent atoms spanning at most `delta` into one atom
/// at the run's mass-weighted mean.
///
/// Total mass and mean are preserved; the second moment drops by exactly the
/// returned deficit, which is at most `delta^2 / 4` times the merged mass.
pub fn merge_atoms(m: &DiscreteMeasure, delta: f64) -> (DiscreteMeasure, f64) {
    assert!(delta > 0.0, "merge delta must be positive");
    let atoms = &m.atoms;
    let mut out = Vec::with_capacity(atoms.len());
    let mut deficit = 0.0;
    let mut i = 0;
    while i < atoms.len() {
        let start = atoms[i].0;
        let mut j = i + 1;
        while j < atoms.len() && atoms[j].0 - start <= delta {
            j += 1;
        }
        if j == i + 1 {
            out.push(atoms[i]);
        } else {
            let run = &atoms[i..j];
            let mass = kahan_sum(run.iter().map(|a| a.1));
            let first = kahan_sum(run.iter().map(|a| a.0 * a.1));
            let loc = (first / mass).clamp(run[0].0, run[run.len() - 1].0);
            // exact second-moment loss of the run, computed about its mean
            deficit += kahan_sum(run.iter().map(|a| a.1 * (a.0 - loc) * (a.0 - loc)));
            out.push((loc, mass));
        }
        i = j;
    }
    (DiscreteMeasure { atoms: out }, deficit)
}

/// Limits on atom growth for the discrete Picard backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomBudget {
    /// Maximum atoms kept after each operation.
    pub cap: usize,
    /// Maximum `|a| * |b|` evaluated by one convolution.
    pub pair_budget: usize,
    /// Merge span applied after every operation before the cap check.
    pub delta: f64,
}

impl Default for AtomBudget {
    fn default() -> Self {
        AtomBudget {
            cap: DEFAULT_ATOM_CAP,
            pair_budget: DEFAULT_PAIR_BUDGET,
            delta: 1e-12,
        }
    }
}

/// Applies `merge_atoms(delta)`; if more than `cap` atoms remain, merges
/// greedy runs whose `mass × width²` stays within a threshold, with the
/// threshold found by bisection so that at most `cap` atoms remain. Spending
/// the atom budget where the mass is keeps the second-moment deficit small.
/// Returns the merged measure and its deficit.
pub fn enforce_cap(m: &DiscreteMeasure, cap: usize, delta: f64) -> (DiscreteMeasure, f64) {
    let cap = cap.max(1);
    let (first, deficit) = merge_atoms(m, delta);
    if first.len() <= cap {
        return (first, deficit);
    }
    let span = m.max_location() - m.atoms[0].0;
    // at tau = span² everything collapses into one run
    let (mut lo, mut hi) = (0.0f64, span * span);
    let mut best = merge_runs(m, hi);
    for _ in 0..60 {
        let mid = if lo == 0.0 { hi * 1e-12 } else { (lo * hi).sqrt() };
        let cand = merge_runs(m, mid);
        if cand.0.len() <= cap {
            let full = cand.0.len() * 20 >= cap * 19;
            hi = mid;
            best = cand;
            if full {
                break;
            }
        } else {
            lo = mid;
        }
        if hi / lo.max(f64::MIN_POSITIVE) < 1.0 + 1e-3 {
            break;
        }
    }
    best
}

/// Greedy runs with `mass × (x_last - x_first)² <= tau`, each replaced by its
/// mass-weighted mean.
fn merge_runs(m: &DiscreteMeasure, tau: f64) -> (DiscreteMeasure, f64) {
    let atoms = &m.atoms;
    let mut out = Vec::new();
    let mut deficit = 0.0;
    let mut i = 0;
    while i < atoms.len() {
        let mut j = i + 1;
        let mut mass = atoms[i].1;
        while j < atoms.len() {
            let w = atoms[j].0 - atoms[i].0;
            if (mass + atoms[j].1) * w * w > tau {
                break;
            }
            mass += atoms[j].1;
            j += 1;
        }
        if j == i + 1 {
            out.push(atoms[i]);
        } else {
            let run = &atoms[i..j];
            let mass = kahan_sum(run.iter().map(|a| a.1));
            let first = kahan_sum(run.iter().map(|a| a.0 * a.1));
            let loc = (first / mass).clamp(run[0].0, run[run.len() - 1].0);
            deficit += kahan_sum(run.iter().map(|a| a.1 * (a.0 - loc) * (a.0 - loc)));
            out.push((loc, mass));
        }
        i = j;
    }
    (DiscreteMeasure { atoms: out }, deficit)
}

/// Accumulates the second-moment deficit of every merge performed.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Drift(pub f64);

impl Drift {
    fn cap(&mut self, m: DiscreteMeasure, budget: Option<&AtomBudget>) -> DiscreteMeasure {
        match budget {
            None => m,
            Some(b) => {
                let (out, def) = enforce_cap(&m, b.cap, b.delta);
                self.0 += def;
                out
            }
        }
    }

    fn convolve(
        &mut self,
        a: &DiscreteMeasure,
        b: &DiscreteMeasure,
        budget: Option<&AtomBudget>,
    ) -> DiscreteMeasure {
        let Some(bud) = budget else {
            return convolve(a, b);
        };
        let mut a = a.clone();
        let mut b = b.clone();
        while a.len().saturating_mul(b.len()) > bud.pair_budget {
            let (big, small) = if a.len() >= b.len() { (&mut a, &b) } else { (&mut b, &a) };
            let target = (bud.pair_budget / small.len().max(1)).max(big.len() / 2).min(big.len() - 1).max(1);
            let (m, def) = enforce_cap(big, target, bud.delta);
            self.0 += def;
            *big = m;
        }
        let out = convolve(&a, &b);
        self.cap(out, budget)
    }
}

/// Exact law of the right-hand side of the weighted-sum equation.
///
/// With independent weights this is `B + Σ_{i=1}^{N+m} T_i X_i`; with
/// `common_t` it is `B + T Σ_{i=1}^{N+m} X_i`. `B` is omitted when `b` is
/// `None`. Requires a finite-support count law.
pub fn weighted_sum_law(
    t: &DiscreteMeasure,
    x: &DiscreteMeasure,
    n: &CountLaw,
    m: u64,
    b: Option<&DiscreteMeasure>,
    common_t: bool,
) -> Result<DiscreteMeasure> {
    weighted_sum_law_budgeted(t, x, n, m, b, common_t, None).map(|(law, _)| law)
}

/// [`weighted_sum_law`] with atom merging under `budget`; also returns the
/// accumulated second-moment deficit.
pub fn weighted_sum_law_budgeted(
    t: &DiscreteMeasure,
    x: &DiscreteMeasure,
    n: &CountLaw,
    m: u64,
    b: Option<&DiscreteMeasure>,
    common_t: bool,
    budget: Option<&AtomBudget>,
) -> Result<(DiscreteMeasure, f64)> {
    let support = n.finite_support().ok_or(Error::InfiniteSupportCount)?;
    let mut drift = Drift::default();
    let max_k = support.iter().map(|e| e.0 + m).max().unwrap_or(0);
    let summand = if common_t {
        x.clone()
    } else {
        let tx = product_law(t, x);
        drift.cap(tx, budget)
    };

    // convolution powers summand^{*j} for j = 0..=max_k, kept only where needed
    let needed: Vec<u64> = support.iter().map(|e| e.0 + m).collect();
    let mut powers: Vec<(u64, DiscreteMeasure)> = Vec::new();
    let mut cur = DiscreteMeasure { atoms: vec![(0.0, 1.0)] };
    for j in 0..=max_k {
        if j > 0 {
            cur = drift.convolve(&cur, &summand, budget);
        }
        if needed.contains(&j) {
            powers.push((j, cur.clone()));
        }
    }
    let power = |j: u64| &powers.iter().find(|p| p.0 == j).expect("power computed").1;

    let sum_law = if common_t {
        let mut parts = Vec::with_capacity(t.len());
        for &(tv, tw) in &t.atoms {
            let inner: Vec<(f64, DiscreteMeasure)> =
                support.iter().map(|&(k, w)| (w, power(k + m).clone())).collect();
            parts.push((tw, mixture(&inner).scale(tv)));
        }
        mixture(&parts)
    } else {
        let parts: Vec<(f64, DiscreteMeasure)> =
            support.iter().map(|&(k, w)| (w, power(k + m).clone())).collect();
        mixture(&parts)
    };
    let sum_law = drift.cap(sum_law, budget);
    let out = match b {
        Some(b) => drift.convolve(b, &sum_law, budget),
        None => sum_law,
    };
    Ok((out, drift.0))
}

/// Neumaier-compensated sum.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in it {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dm(a: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(a.to_vec()).unwrap()
    }

    #[test]
    fn construction_examples() {
        let m = dm(&[(0.3, 0.5), (0.7, 0.5)]);
        assert_eq!(m.len(), 2);
        assert_relative_eq!(m.mean(), 0.5, epsilon = 1e-15);

        let m = dm(&[(1.0, 0.4), (1.0, 0.6)]);
        assert_eq!(m.atoms(), &[(1.0, 1.0)]);

        let err = DiscreteMeasure::new(vec![(0.5, 0.5), (0.5, 0.4)]).unwrap_err();
        assert!(matches!(err, Error::MassNotNormalized(s) if (s - 0.9).abs() < 1e-12));
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            DiscreteMeasure::new(vec![(-0.1, 1.0)]),
            Err(Error::NegativeLocation(_))
        ));
        assert!(matches!(
            DiscreteMeasure::new(vec![(0.1, 0.0), (0.2, 1.0)]),
            Err(Error::NonPositiveMass(_))
        ));
        assert!(matches!(DiscreteMeasure::new(vec![]), Err(Error::MassNotNormalized(_))));
    }

    #[test]
    fn unsorted_input_is_sorted() {
        let m = dm(&[(2.0, 0.25), (0.0, 0.25), (1.0, 0.5)]);
        let locs: Vec<f64> = m.atoms().iter().map(|a| a.0).collect();
        assert_eq!(locs, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn moment_examples() {
        let m = dm(&[(0.3, 0.5), (0.7, 0.5)]);
        assert_relative_eq!(moment(&m, 2.0), 0.29, epsilon = 1e-15);
        let c = dm(&[(1.7, 1.0)]);
        for k in [0.0, 1.0, 2.0, 3.5] {
            assert_relative_eq!(moment(&c, k), 1.7f64.powf(k), max_relative = 1e-14);
        }
        assert_relative_eq!(moment(&dm(&[(0.25, 1.0)]), 0.5), 0.5, epsilon = 1e-15);
        // 0^0 = 1
        assert_eq!(moment(&dm(&[(0.0, 1.0)]), 0.0), 1.0);
    }

    #[test]
    fn length_biased_examples() {
        let lb = length_biased(&dm(&[(0.3, 0.5), (0.7, 0.5)])).unwrap();
        assert_relative_eq!(lb.atoms()[0].1, 0.3, epsilon = 1e-15);
        assert_relative_eq!(lb.atoms()[1].1, 0.7, epsilon = 1e-15);
        assert_relative_eq!(lb.mean(), 0.58, epsilon = 1e-15);

        let c = dm(&[(0.4, 1.0)]);
        assert_eq!(length_biased(&c).unwrap(), c);

        let lb = length_biased(&dm(&[(0.0, 0.5), (0.6, 0.5)])).unwrap();
        assert_eq!(lb.atoms(), &[(0.6, 1.0)]);

        assert_eq!(length_biased(&dm(&[(0.0, 1.0)])), Err(Error::ZeroMean));
    }

    #[test]
    fn eckberg_examples() {
        let e = eckberg_two_atom(MomentPair::new(1.0, 2.0).unwrap()).unwrap();
        assert_eq!(e.atoms(), &[(0.0, 0.5), (2.0, 0.5)]);
        assert_relative_eq!(e.moment(1.0), 1.0);
        assert_relative_eq!(e.moment(2.0), 2.0);

        let e = eckberg_two_atom(MomentPair::new(1.3, 1.69).unwrap()).unwrap();
        assert_eq!(e.atoms(), &[(1.3, 1.0)]);

        let e = eckberg_two_atom(MomentPair::new(1.0, 1.19047619).unwrap()).unwrap();
        assert_relative_eq!(e.atoms()[0].1, 0.16, epsilon = 1e-8);
        assert_relative_eq!(e.atoms()[1].0, 1.19047619, epsilon = 1e-12);
        assert_relative_eq!(e.atoms()[1].1, 0.84, epsilon = 1e-8);

        assert!(matches!(MomentPair::new(1.0, 0.9), Err(Error::InvalidMoments { .. })));
    }

    #[test]
    fn weighted_sum_examples() {
        let t = dm(&[(0.5, 1.0)]);
        let x = dm(&[(0.0, 0.5), (2.0, 0.5)]);
        let out = weighted_sum_law(&t, &x, &CountLaw::degenerate(2), 0, None, false).unwrap();
        assert_eq!(out.atoms(), &[(0.0, 0.25), (1.0, 0.5), (2.0, 0.25)]);

        let out = weighted_sum_law(&t, &x, &CountLaw::degenerate(0), 0, None, false).unwrap();
        assert_eq!(out.atoms(), &[(0.0, 1.0)]);

        let one = dm(&[(1.0, 1.0)]);
        let b = dm(&[(3.0, 1.0)]);
        let out =
            weighted_sum_law(&one, &one, &CountLaw::degenerate(1), 0, Some(&b), false).unwrap();
        assert_eq!(out.atoms(), &[(4.0, 1.0)]);

        let geo = CountLaw::geometric1(0.5).unwrap();
        assert_eq!(
            weighted_sum_law(&t, &x, &geo, 0, None, false),
            Err(Error::InfiniteSupportCount)
        );
    }

    #[test]
    fn common_t_shares_the_weight() {
        // T ∈ {0.5, 1} w.p. 1/2, X ≡ 1, N ≡ 2: T(X1 + X2) ∈ {1, 2}
        let t = dm(&[(0.5, 0.5), (1.0, 0.5)]);
        let x = dm(&[(1.0, 1.0)]);
        let out = weighted_sum_law(&t, &x, &CountLaw::degenerate(2), 0, None, true).unwrap();
        assert_eq!(out.atoms(), &[(1.0, 0.5), (2.0, 0.5)]);
        let ind = weighted_sum_law(&t, &x, &CountLaw::degenerate(2), 0, None, false).unwrap();
        assert_eq!(ind.len(), 3);
    }

    #[test]
    fn merge_examples() {
        let m = dm(&[(1.0, 0.5), (1.0 + 1e-9, 0.5)]);
        let (out, _) = merge_atoms(&m, 1e-6);
        assert_eq!(out.len(), 1);
        assert_relative_eq!(out.atoms()[0].0, 1.0 + 5e-10, epsilon = 1e-15);

        let m = dm(&[(0.0, 0.25), (0.5, 0.25), (1.0, 0.5)]);
        let (out, def) = merge_atoms(&m, 0.1);
        assert_eq!(out, m);
        assert_eq!(def, 0.0);

        let m = dm(&[(0.0, 0.25), (1e-7, 0.25), (1.0, 0.5)]);
        let (out, def) = merge_atoms(&m, 1e-6);
        assert_eq!(out.len(), 2);
        assert_relative_eq!(out.atoms()[0].0, 5e-8, epsilon = 1e-20);
        assert_relative_eq!(out.atoms()[0].1, 0.5);
        assert_relative_eq!(def, 0.5 * 2.5e-15, max_relative = 1e-9);
    }

    #[test]
    fn cap_enforcement_reduces_support() {
        let atoms: Vec<(f64, f64)> = (0..1000).map(|i| (i as f64 * 1e-3, 1e-3)).collect();
        let m = dm(&atoms);
        let (out, def) = enforce_cap(&m, 100, 1e-12);
        assert!(out.len() <= 100);
        assert_relative_eq!(out.mean(), m.mean(), max_relative = 1e-13);
        assert_relative_eq!(m.moment(2.0) - out.moment(2.0), def, max_relative = 1e-6);
    }

    #[test]
    fn count_stats_examples() {
        let s = count_stats(&CountLaw::geometric1(0.5).unwrap());
        assert_eq!((s.mean, s.variance, s.factorial2, s.second_moment), (2.0, 2.0, 4.0, 6.0));
        let s = count_stats(&CountLaw::degenerate(3));
        assert_eq!((s.mean, s.variance, s.factorial2, s.second_moment), (3.0, 0.0, 6.0, 9.0));
        let s = count_stats(&CountLaw::poisson(2.0).unwrap());
        assert_eq!((s.mean, s.variance, s.factorial2, s.second_moment), (2.0, 2.0, 4.0, 6.0));
    }

    /// Brute-force partial sums over the pmf, independent of the closed forms.
    #[test]
    fn count_stats_match_truncated_sums() {
        let laws = [
            CountLaw::geometric1(0.5).unwrap(),
            CountLaw::geometric1(0.3).unwrap(),
            CountLaw::geometric0(0.4).unwrap(),
            CountLaw::poisson(2.0).unwrap(),
            CountLaw::poisson(0.7).unwrap(),
            CountLaw::pmf(vec![(0, 0.2), (3, 0.5), (7, 0.3)]).unwrap(),
        ];
        for law in laws {
            let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
            for k in 0..2000u64 {
                let w = law.pmf_at(k);
                let kf = k as f64;
                m0 += w;
                m1 += w * kf;
                m2 += w * kf * kf;
            }
            let s = count_stats(&law);
            assert_relative_eq!(m0, 1.0, epsilon = 1e-12);
            assert_relative_eq!(s.mean, m1, max_relative = 1e-12);
            assert_relative_eq!(s.second_moment, m2, max_relative = 1e-12);
            assert_relative_eq!(s.factorial2, m2 - m1, max_relative = 1e-12);
            assert_relative_eq!(s.variance, m2 - m1 * m1, max_relative = 1e-10, epsilon = 1e-14);
        }
    }

    #[test]
    fn count_law_validation() {
        assert!(CountLaw::geometric1(1.0).is_err());
        assert!(CountLaw::geometric0(0.0).is_err());
        assert!(CountLaw::poisson(-1.0).is_err());
        assert!(CountLaw::pmf(vec![(1, 0.5)]).is_err());
        let law = CountLaw::pmf(vec![(2, 0.25), (1, 0.5), (2, 0.25)]).unwrap();
        assert_eq!(law, CountLaw::Pmf { pmf: vec![(1, 0.5), (2, 0.5)] });
    }
}
