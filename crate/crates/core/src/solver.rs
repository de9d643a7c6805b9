//! Closed-form moments and the monotone Picard iteration.
//!
//! The iteration starts from the two-atom law matching the solution's first
//! two moments. That law maximizes the transform among all laws with those
//! moments, so every iterate lies below its predecessor and the sequence
//! decreases to the unique solution. Two backends are provided:
//!
//! * **grid**: the transform is tracked on a [`LogGrid`] as an [`LstCurve`];
//!   works for every count law.
//! * **discrete**: the iterate is an explicit [`DiscreteMeasure`], exact up to
//!   atom merging; requires a finite-support count law.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::{check_conditions_with, EquationKind, ProblemSpec, DEFAULT_TOL_EQ};
use crate::error::{Error, Result};
use crate::measures::{
    count_stats, eckberg_two_atom, weighted_sum_law_budgeted, AtomBudget, CountStats, DiscreteMeasure,
    MomentPair, DEFAULT_ATOM_CAP,
};
use crate::transforms::{log_pgf, log_sum_exp, LogGrid, Lst, LstCurve};

/// Tolerance on pointwise increase between successive iterates.
pub const MONOTONICITY_TOL: f64 = 1e-9;

/// First two moments of the solution and the variance formula used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub mu1: f64,
    pub mu2: f64,
    pub variance: f64,
    pub formula_kind: EquationKind,
}

impl MomentReport {
    pub fn moment_pair(&self) -> MomentPair {
        MomentPair { mu1: self.mu1, mu2: self.mu2 }
    }
}

struct Inputs {
    n: CountStats,
    k_mean: f64,
    k_fact2: f64,
    e_t: f64,
    e_t2: f64,
    var_t: f64,
    e_b: f64,
    var_b: f64,
}

fn inputs(p: &ProblemSpec) -> Inputs {
    let n = count_stats(&p.n);
    let m = p.floor() as f64;
    let (e_b, var_b) = p.b.as_ref().map_or((0.0, 0.0), |b| (b.mean(), b.variance()));
    Inputs {
        k_mean: n.mean + m,
        // E[(N+m)(N+m-1)] = E[N(N-1)] + 2m E[N] + m(m-1)
        k_fact2: n.factorial2 + 2.0 * m * n.mean + m * (m - 1.0),
        n,
        e_t: p.t.mean(),
        e_t2: p.t.moment(2.0),
        var_t: p.t.variance(),
        e_b,
        var_b,
    }
}

/// Mean, second moment and variance of the unique finite-variance solution.
pub fn closed_form_moments(p: &ProblemSpec) -> Result<MomentReport> {
    closed_form_moments_with(p, DEFAULT_TOL_EQ)
}

pub fn closed_form_moments_with(p: &ProblemSpec, tol_eq: f64) -> Result<MomentReport> {
    let report = check_conditions_with(p, tol_eq)?;
    if !report.satisfied {
        return Err(Error::ConditionsNotSatisfied(report.failures.join(", ")));
    }
    let x = inputs(p);
    let (mu, variance) = match p.kind {
        EquationKind::Homogeneous | EquationKind::Floored { .. } => {
            let mu = p.target_mean();
            let num = x.e_t * x.e_t * x.n.variance + x.k_mean * x.var_t;
            (mu, num / (1.0 - x.k_mean * x.e_t2) * mu * mu)
        }
        EquationKind::CommonT => {
            let mu = p.target_mean();
            let num = x.n.second_moment * x.e_t2 - 1.0;
            (mu, num / (1.0 - x.n.mean * x.e_t2) * mu * mu)
        }
        EquationKind::Nonhomogeneous => {
            let mu = x.e_b / (1.0 - x.n.mean * x.e_t);
            let num = x.var_b + mu * mu * x.e_t * x.e_t * x.n.variance + mu * mu * x.n.mean * x.var_t;
            (mu, num / (1.0 - x.n.mean * x.e_t2))
        }
        EquationKind::NonhomogeneousCommonT => {
            let mu = x.e_b / (1.0 - x.n.mean * x.e_t);
            let num = x.var_b
                + x.e_b * (2.0 * mu - x.e_b)
                + (x.n.second_moment * x.e_t2 - 1.0) * mu * mu;
            (mu, num / (1.0 - x.n.mean * x.e_t2))
        }
    };
    let variance = variance.max(0.0);
    Ok(MomentReport {
        mu1: mu,
        mu2: mu * mu + variance,
        variance,
        formula_kind: p.kind,
    })
}

/// Moments of the right-hand side when the summands have moments `x`.
pub fn rhs_moments(p: &ProblemSpec, x: MomentPair) -> MomentPair {
    let i = inputs(p);
    let (mu1, mu2) = (x.mu1, x.mu2);
    let (s1, s2) = if p.kind.is_common_t() {
        (i.e_t * i.k_mean * mu1, i.e_t2 * (i.k_mean * mu2 + i.k_fact2 * mu1 * mu1))
    } else {
        (
            i.k_mean * i.e_t * mu1,
            i.k_mean * i.e_t2 * mu2 + i.k_fact2 * i.e_t * i.e_t * mu1 * mu1,
        )
    };
    if p.kind.is_nonhomogeneous() {
        let e_b2 = i.var_b + i.e_b * i.e_b;
        MomentPair { mu1: i.e_b + s1, mu2: e_b2 + 2.0 * i.e_b * s1 + s2 }
    } else {
        MomentPair { mu1: s1, mu2: s2 }
    }
}

/// Rate of the iteration's contraction, `E[N+m] E[T^2]`. Under the
/// homogeneous conditions this is `E[T^2] / E[T]`, the mean of the
/// length-biased weight.
pub fn contraction_rate(p: &ProblemSpec) -> f64 {
    let i = inputs(p);
    i.k_mean * i.e_t2
}

/// `ln` of the right-hand side transform at `s`, with the unknown's
/// transform supplied by `x`.
pub fn rhs_log_lst<L: Lst + ?Sized>(p: &ProblemSpec, x: &L, s: f64) -> f64 {
    rhs_log_lst_scaled(p, x, s, 1.0)
}

/// Same as [`rhs_log_lst`] with every weight `t` replaced by `t^power`.
fn rhs_log_lst_scaled<L: Lst + ?Sized>(p: &ProblemSpec, x: &L, s: f64, power: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    let m = p.floor() as f64;
    let weight = |t: f64| if power == 1.0 { t } else { t.powf(power) };
    let core = if p.kind.is_common_t() {
        let terms: Vec<f64> = p
            .t
            .atoms()
            .iter()
            .map(|&(t, w)| {
                let inner = x.log_lst(weight(t) * s);
                w.ln() + m * inner + log_pgf(&p.n, inner)
            })
            .collect();
        log_sum_exp(&terms)
    } else {
        let terms: Vec<f64> = p
            .t
            .atoms()
            .iter()
            .map(|&(t, w)| w.ln() + x.log_lst(weight(t) * s))
            .collect();
        let inner = log_sum_exp(&terms);
        let floor_part = if m > 0.0 { m * inner } else { 0.0 };
        floor_part + log_pgf(&p.n, inner)
    };
    match &p.b {
        Some(b) if p.kind.is_nonhomogeneous() => b.log_lst(s) + core,
        _ => core,
    }
}

/// `|F̂(s) - RHS(s)|`.
pub fn fixed_point_residual<L: Lst + ?Sized>(p: &ProblemSpec, x: &L, s: f64) -> f64 {
    (x.lst(s) - rhs_log_lst(p, x, s).exp()).abs()
}

/// Transform of `S_α X^{1/α}`: `s ↦ F̂(s^α)`.
pub struct StableMapped<'a, L: ?Sized> {
    pub src: &'a L,
    pub alpha: f64,
}

impl<L: Lst + ?Sized> Lst for StableMapped<'_, L> {
    fn log_lst(&self, s: f64) -> f64 {
        self.src.log_lst(s.powf(self.alpha))
    }

    fn one_minus_lst(&self, s: f64) -> f64 {
        self.src.one_minus_lst(s.powf(self.alpha))
    }

    fn moment_pair(&self) -> Option<MomentPair> {
        None
    }
}

/// Residual of the stable-mapped transform in the equation whose weights
/// are `T^{1/α}`: `|F̂_α(s) - P_N(Σ_j w_j F̂_α(t_j^{1/α} s))|`.
pub fn stable_fixed_point_residual<L: Lst + ?Sized>(p: &ProblemSpec, x: &L, alpha: f64, s: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let mapped = StableMapped { src: x, alpha };
    let rhs = rhs_log_lst_scaled(p, &mapped, s, 1.0 / alpha).exp();
    Ok((mapped.lst(s) - rhs).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Discrete when the recursion is linear in the unknown (at most one
    /// summand) and `N` has finite support; grid otherwise.
    #[default]
    Auto,
    Grid,
    Discrete,
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(Backend::Auto),
            "grid" => Ok(Backend::Grid),
            "discrete" => Ok(Backend::Discrete),
            other => Err(format!("unknown backend {other:?} (expected auto, grid or discrete)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: Option<usize>,
    pub backend: Backend,
    pub merge_delta: f64,
    pub atom_cap: usize,
    pub grid: LogGrid,
    pub tol_eq: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            max_iter: None,
            backend: Backend::Auto,
            merge_delta: 1e-12,
            atom_cap: DEFAULT_ATOM_CAP,
            grid: LogGrid::default(),
            tol_eq: DEFAULT_TOL_EQ,
        }
    }
}

/// A Picard iterate.
#[derive(Debug, Clone, PartialEq)]
pub enum Iterate {
    Curve(LstCurve),
    Measure(DiscreteMeasure),
}

impl Lst for Iterate {
    fn log_lst(&self, s: f64) -> f64 {
        match self {
            Iterate::Curve(c) => c.log_lst(s),
            Iterate::Measure(m) => m.log_lst(s),
        }
    }

    fn one_minus_lst(&self, s: f64) -> f64 {
        match self {
            Iterate::Curve(c) => c.one_minus_lst(s),
            Iterate::Measure(m) => m.one_minus_lst(s),
        }
    }

    fn moment_pair(&self) -> Option<MomentPair> {
        match self {
            Iterate::Curve(c) => c.moment_pair(),
            Iterate::Measure(m) => m.moment_pair(),
        }
    }
}

impl Iterate {
    pub fn as_curve(&self) -> Option<&LstCurve> {
        match self {
            Iterate::Curve(c) => Some(c),
            Iterate::Measure(_) => None,
        }
    }

    pub fn as_measure(&self) -> Option<&DiscreteMeasure> {
        match self {
            Iterate::Measure(m) => Some(m),
            Iterate::Curve(_) => None,
        }
    }
}

/// One grid-backend step: the right-hand side evaluated at every grid point,
/// with moments propagated exactly.
pub fn picard_step_curve<L: Lst + Sync + ?Sized>(p: &ProblemSpec, cur: &L, grid: &LogGrid) -> Result<LstCurve> {
    let mp = cur.moment_pair().ok_or(Error::ZeroMean)?;
    let vals: Vec<f64> = grid.points().par_iter().map(|&s| rhs_log_lst(p, cur, s).min(0.0)).collect();
    LstCurve::from_log_values(grid.clone(), vals, rhs_moments(p, mp))
}

/// One discrete-backend step: exact right-hand side law, merged under
/// `budget`. Returns the new law and its second-moment deficit.
pub fn picard_step_measure(
    p: &ProblemSpec,
    cur: &DiscreteMeasure,
    budget: &AtomBudget,
) -> Result<(DiscreteMeasure, f64)> {
    if p.n.finite_support().is_none() {
        return Err(Error::BackendUnsupported("discrete backend needs a finite-support N".into()));
    }
    let b = p.b.as_ref().filter(|_| p.kind.is_nonhomogeneous());
    weighted_sum_law_budgeted(&p.t, cur, &p.n, p.floor(), b, p.kind.is_common_t(), Some(budget))
}

/// Applies the backend-matched step to `cur`.
pub fn picard_step(p: &ProblemSpec, cur: &Iterate, opts: &SolveOptions) -> Result<(Iterate, f64)> {
    match cur {
        Iterate::Curve(c) => Ok((Iterate::Curve(picard_step_curve(p, c, &opts.grid)?), 0.0)),
        Iterate::Measure(m) => {
            let budget = AtomBudget { cap: opts.atom_cap, delta: opts.merge_delta, ..AtomBudget::default() };
            let (next, drift) = picard_step_measure(p, m, &budget)?;
            Ok((Iterate::Measure(next), drift))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub solution: Iterate,
    pub backend: Backend,
    pub moments: MomentReport,
    pub iterations: usize,
    pub converged: bool,
    /// `sup_s |F̂_{n-1}(s) - F̂_n(s)|` over the grid, one entry per step.
    pub sup_diffs: Vec<f64>,
    /// `sup_s |F̂_{n-1}(s) - F̂_n(s)| / (μ₁ s)`: the same decrements in the
    /// equilibrium-transform scale, where the contraction rate applies.
    pub equilibrium_diffs: Vec<f64>,
    /// Largest pointwise increase seen between successive iterates, beyond
    /// the slack explained by atom merging on the discrete backend.
    pub max_increase: f64,
    pub contraction_rate: f64,
    /// `2 μ_W s_max ρ^n` with `μ_W = μ₂ / (2μ₁)`.
    pub certified_error: f64,
    /// Smaller of the last sup-diff and the certificate.
    pub error_estimate: f64,
    /// Accumulated second-moment deficit from atom merging.
    pub moment_drift: f64,
    pub extrapolation_used: bool,
    pub uniqueness_certified: bool,
    /// Mean recovered from the solution's transform near zero.
    pub extracted_mean: f64,
    /// Second moment recovered from the solution's transform near zero.
    pub extracted_mu2: f64,
}

impl SolveResult {
    pub fn require_converged(&self) -> Result<&Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::MaxIterExceeded(self.iterations))
        }
    }

    /// Transform values of the solution on `grid`.
    pub fn curve_on(&self, grid: &LogGrid) -> Result<LstCurve> {
        match &self.solution {
            Iterate::Curve(c) if c.grid() == grid => Ok(c.clone()),
            other => {
                let mp = other.moment_pair().ok_or(Error::ZeroMean)?;
                LstCurve::from_log_fn(grid.clone(), mp, |s| other.log_lst(s))
            }
        }
    }

    /// Ratios `sup_diffs[n + 1] / sup_diffs[n]` for `n >= from`, skipping
    /// pairs already at the rounding floor.
    pub fn contraction_ratios(&self, from: usize) -> Vec<f64> {
        ratios(&self.sup_diffs, from)
    }

    /// [`Self::contraction_ratios`] for the equilibrium-scale decrements.
    pub fn equilibrium_ratios(&self, from: usize) -> Vec<f64> {
        ratios(&self.equilibrium_diffs, from)
    }
}

fn ratios(d: &[f64], from: usize) -> Vec<f64> {
    const FLOOR: f64 = 1e-13;
    (from..d.len().saturating_sub(1))
        .filter(|&n| d[n] > FLOOR && d[n + 1] > FLOOR)
        .map(|n| d[n + 1] / d[n])
        .collect()
}

fn default_max_iter(rate: f64, mp: MomentPair, s_max: f64, tol: f64) -> usize {
    if !(rate > 0.0 && rate < 1.0) {
        return 1000;
    }
    let mu_w = mp.equilibrium_mean();
    let n = ((tol / (2.0 * mu_w * s_max)).ln() / rate.ln()).ceil();
    (n.max(0.0) as usize + 10).min(100_000)
}

fn resolve_backend(p: &ProblemSpec, requested: Backend) -> Result<Backend> {
    let finite = p.n.finite_support().is_some();
    match requested {
        Backend::Grid => Ok(Backend::Grid),
        Backend::Discrete if finite => Ok(Backend::Discrete),
        Backend::Discrete => Err(Error::BackendUnsupported(
            "discrete backend needs a finite-support N".into(),
        )),
        Backend::Auto => {
            let linear = p.n.max_value().is_some_and(|k| k + p.floor() <= 1);
            Ok(if finite && linear { Backend::Discrete } else { Backend::Grid })
        }
    }
}

/// Recovers `(μ₁, μ₂)` from `g(s) = (1 - F̂(s)) / s = μ₁ - μ₂ s / 2 + O(s²)`
/// by quadratic extrapolation through the first three grid points.
pub fn extract_moments<L: Lst + ?Sized>(src: &L, grid: &LogGrid) -> (f64, f64) {
    let s = &grid.points()[..3];
    let g: Vec<f64> = s.iter().map(|&x| src.one_minus_lst(x) / x).collect();
    let (s0, s1, s2) = (s[0], s[1], s[2]);
    let (g0, g1, g2) = (g[0], g[1], g[2]);
    // Lagrange basis at 0 and its derivative at 0
    let l0 = s1 * s2 / ((s0 - s1) * (s0 - s2));
    let l1 = s0 * s2 / ((s1 - s0) * (s1 - s2));
    let l2 = s0 * s1 / ((s2 - s0) * (s2 - s1));
    let d0 = -(s1 + s2) / ((s0 - s1) * (s0 - s2));
    let d1 = -(s0 + s2) / ((s1 - s0) * (s1 - s2));
    let d2 = -(s0 + s1) / ((s2 - s0) * (s2 - s1));
    let mu1 = l0 * g0 + l1 * g1 + l2 * g2;
    let slope = d0 * g0 + d1 * g1 + d2 * g2;
    (mu1, -2.0 * slope)
}

/// Runs the Picard iteration from the moment-matched two-atom law.
pub fn solve(p: &ProblemSpec, opts: &SolveOptions) -> Result<SolveResult> {
    let report = check_conditions_with(p, opts.tol_eq)?;
    if !report.satisfied {
        return Err(Error::ConditionsNotSatisfied(report.failures.join(", ")));
    }
    let moments = closed_form_moments_with(p, opts.tol_eq)?;
    let backend = resolve_backend(p, opts.backend)?;
    let rate = contraction_rate(p);
    let mp = MomentPair::new(moments.mu1, moments.mu2)?;
    let grid = &opts.grid;
    let max_iter = opts
        .max_iter
        .unwrap_or_else(|| default_max_iter(rate, mp, grid.s_max(), opts.tol));
    let budget = AtomBudget { cap: opts.atom_cap, delta: opts.merge_delta, ..AtomBudget::default() };

    let start = eckberg_two_atom(mp)?;
    let mut cur_vals: Vec<f64> = grid.points().iter().map(|&s| start.lst(s)).collect();
    let mut cur = Iterate::Measure(start);
    let mut sup_diffs = Vec::new();
    let mut equilibrium_diffs = Vec::new();
    let mut max_increase: f64 = 0.0;
    let mut drift = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut extrapolation_used = false;
    let extrapolates = p.t.max_location() > 1.0;

    while iterations < max_iter {
        let next = match backend {
            Backend::Discrete => {
                let m = cur.as_measure().expect("discrete backend keeps measures");
                let (next, d) = picard_step_measure(p, m, &budget)?;
                drift += d;
                Iterate::Measure(next)
            }
            _ => {
                if matches!(cur, Iterate::Curve(_)) && extrapolates {
                    extrapolation_used = true;
                }
                Iterate::Curve(picard_step_curve(p, &cur, grid)?)
            }
        };
        iterations += 1;
        let next_vals: Vec<f64> = match &next {
            Iterate::Curve(c) => c.values(),
            Iterate::Measure(m) => grid.points().par_iter().map(|&s| m.lst(s)).collect(),
        };
        // A merged law is smaller in convex order than the exact iterate with
        // the same mean, so it sits below it by at most s²/2 times its
        // second-moment shortfall. Increases within that slack are merge
        // noise, not a failure of the iteration.
        let shortfall = match &cur {
            Iterate::Measure(m) if backend == Backend::Discrete => (mp.mu2 - m.moment(2.0)).max(0.0),
            _ => 0.0,
        };
        let mut diff: f64 = 0.0;
        let mut eq_diff: f64 = 0.0;
        let mut worst = (0.0, 0.0);
        for ((&a, &b), &s) in cur_vals.iter().zip(&next_vals).zip(grid.points()) {
            diff = diff.max((a - b).abs());
            eq_diff = eq_diff.max((a - b).abs() / (mp.mu1 * s));
            let excess = b - a - 0.5 * s * s * shortfall;
            if excess > worst.1 {
                worst = (s, excess);
            }
        }
        max_increase = max_increase.max(worst.1);
        if worst.1 > MONOTONICITY_TOL {
            return Err(Error::MonotonicityViolated { iteration: iterations, s: worst.0, excess: worst.1 });
        }
        sup_diffs.push(diff);
        equilibrium_diffs.push(eq_diff);
        cur = next;
        cur_vals = next_vals;
        let certificate = 2.0 * mp.equilibrium_mean() * grid.s_max() * rate.powi(iterations as i32);
        if diff <= opts.tol || certificate <= opts.tol {
            converged = true;
            break;
        }
    }

    let certified_error = 2.0 * mp.equilibrium_mean() * grid.s_max() * rate.powi(iterations as i32);
    let last = sup_diffs.last().copied().unwrap_or(0.0);
    let (extracted_mean, extracted_mu2) = match &cur {
        Iterate::Measure(m) => (m.mean(), m.moment(2.0)),
        Iterate::Curve(c) => extract_moments(c, grid),
    };
    Ok(SolveResult {
        solution: cur,
        backend,
        moments,
        iterations,
        converged,
        sup_diffs,
        equilibrium_diffs,
        max_increase,
        contraction_rate: rate,
        certified_error,
        error_estimate: last.min(certified_error),
        moment_drift: drift,
        extrapolation_used,
        uniqueness_certified: report.uniqueness_certified,
        extracted_mean,
        extracted_mu2,
    })
}
