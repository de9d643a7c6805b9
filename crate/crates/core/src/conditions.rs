//! Problem definitions and the moment conditions deciding whether an
//! equation has a unique finite-variance solution with the requested mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{count_stats, CountLaw, CountStats, DiscreteMeasure};

/// Default absolute tolerance for equality clauses.
pub const DEFAULT_TOL_EQ: f64 = 1e-9;

/// Bisection steps used by [`solve_liu_alpha`].
const LIU_BISECTION_STEPS: usize = 200;
const LIU_SCAN_CELLS: usize = 256;

/// Which fixed-point equation is being solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EquationKind {
    /// `X = Σ_{i=1}^N T_i X_i`.
    Homogeneous,
    /// `X = Σ_{i=1}^m T_i X_i + Σ_{j=1}^N T_{j+m} X_{j+m}` with `m >= 1`.
    Floored { m: u64 },
    /// `X = B + Σ_{i=1}^N T_i X_i`.
    Nonhomogeneous,
    /// `X = T Σ_{i=1}^N X_i` with one shared weight.
    CommonT,
    /// `X = B + T Σ_{i=1}^N X_i`.
    NonhomogeneousCommonT,
}

impl EquationKind {
    pub fn name(&self) -> &'static str {
        match self {
            EquationKind::Homogeneous => "homogeneous",
            EquationKind::Floored { .. } => "floored",
            EquationKind::Nonhomogeneous => "nonhomogeneous",
            EquationKind::CommonT => "common_t",
            EquationKind::NonhomogeneousCommonT => "nonhomogeneous_common_t",
        }
    }

    pub fn is_nonhomogeneous(&self) -> bool {
        matches!(self, EquationKind::Nonhomogeneous | EquationKind::NonhomogeneousCommonT)
    }

    pub fn is_common_t(&self) -> bool {
        matches!(self, EquationKind::CommonT | EquationKind::NonhomogeneousCommonT)
    }

    /// Number of summands always present (`m` for floored, else 0).
    pub fn floor(&self) -> u64 {
        match self {
            EquationKind::Floored { m } => *m,
            _ => 0,
        }
    }
}

/// A fully specified equation: kind, laws and target mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: EquationKind,
    pub n: CountLaw,
    pub t: DiscreteMeasure,
    pub b: Option<DiscreteMeasure>,
    /// Target mean. Required for homogeneous kinds; for nonhomogeneous kinds
    /// the mean is determined by the laws and a given value is only checked.
    pub mu: Option<f64>,
}

impl ProblemSpec {
    pub fn new(
        kind: EquationKind,
        n: CountLaw,
        t: DiscreteMeasure,
        b: Option<DiscreteMeasure>,
        mu: Option<f64>,
    ) -> Result<Self> {
        let p = ProblemSpec { kind, n, t, b, mu };
        p.validate()?;
        Ok(p)
    }

    pub fn homogeneous(n: CountLaw, t: DiscreteMeasure, mu: f64) -> Result<Self> {
        Self::new(EquationKind::Homogeneous, n, t, None, Some(mu))
    }

    pub fn floored(m: u64, n: CountLaw, t: DiscreteMeasure, mu: f64) -> Result<Self> {
        Self::new(EquationKind::Floored { m }, n, t, None, Some(mu))
    }

    pub fn common_t(n: CountLaw, t: DiscreteMeasure, mu: f64) -> Result<Self> {
        Self::new(EquationKind::CommonT, n, t, None, Some(mu))
    }

    pub fn nonhomogeneous(n: CountLaw, t: DiscreteMeasure, b: DiscreteMeasure) -> Result<Self> {
        Self::new(EquationKind::Nonhomogeneous, n, t, Some(b), None)
    }

    pub fn nonhomogeneous_common_t(n: CountLaw, t: DiscreteMeasure, b: DiscreteMeasure) -> Result<Self> {
        Self::new(EquationKind::NonhomogeneousCommonT, n, t, Some(b), None)
    }

    pub fn validate(&self) -> Result<()> {
        self.n.validate().map_err(|e| Error::SpecInvalid(e.to_string()))?;
        if let EquationKind::Floored { m } = self.kind {
            if m == 0 {
                return Err(Error::SpecInvalid("floored equation needs m >= 1".into()));
            }
        }
        match (self.kind.is_nonhomogeneous(), self.b.is_some()) {
            (true, false) => {
                return Err(Error::SpecInvalid(format!("{} equation needs B", self.kind.name())))
            }
            (false, true) => {
                return Err(Error::SpecInvalid(format!("{} equation takes no B", self.kind.name())))
            }
            _ => {}
        }
        match self.mu {
            Some(mu) if !(mu > 0.0 && mu.is_finite()) => {
                Err(Error::SpecInvalid(format!("mu = {mu} must be positive")))
            }
            None if !self.kind.is_nonhomogeneous() => {
                Err(Error::SpecInvalid("mu is required for homogeneous kinds".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn floor(&self) -> u64 {
        self.kind.floor()
    }

    /// Mean of the solution: `mu`, or `E[B] / (1 - E[N]E[T])`.
    pub fn target_mean(&self) -> f64 {
        match (&self.b, self.kind.is_nonhomogeneous()) {
            (Some(b), true) => {
                let en = count_stats(&self.n).mean;
                b.mean() / (1.0 - en * self.t.mean())
            }
            _ => self.mu.expect("validated: mu present"),
        }
    }
}

/// Moments of the inputs entering the conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scalars {
    pub e_n: f64,
    pub var_n: f64,
    pub e_n2: f64,
    pub e_t: f64,
    pub e_t2: f64,
    pub var_t: f64,
    /// `E[T^2] / E[T]`, the mean of the length-biased weight.
    pub rho: f64,
    pub e_b: Option<f64>,
    pub var_b: Option<f64>,
    /// Derived mean for nonhomogeneous kinds.
    pub mu: Option<f64>,
}

/// One named clause of a condition set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub name: String,
    pub holds: bool,
}

/// Root of `E[N] E[T^α] = 1` in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiuAlpha {
    pub alpha: f64,
    /// `E[T^α log T]` at the root.
    pub tlogt: f64,
}

impl LiuAlpha {
    pub fn derivative_condition(&self) -> bool {
        self.tlogt <= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Unique,
    ExistsUniquenessNotCertified,
    NotSatisfied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub kind: EquationKind,
    pub satisfied: bool,
    pub verdict: Verdict,
    pub scalars: Scalars,
    pub clauses: Vec<Clause>,
    pub failures: Vec<String>,
    pub liu_alpha: Option<LiuAlpha>,
    pub liu4: bool,
    pub liu5: bool,
    pub prop1: bool,
    pub uniqueness_certified: bool,
    /// Nonhomogeneous kinds only: `Var(B) + Var(T) + Var(N) = 0`, where
    /// every law is a point mass and so is the solution.
    pub trivial_case: bool,
    /// The conditions hold and the solution is a point mass at its mean.
    pub degenerate_solution: bool,
}

struct ClauseSet(Vec<Clause>);

impl ClauseSet {
    fn push(&mut self, name: &str, holds: bool) {
        self.0.push(Clause { name: name.to_string(), holds });
    }
}

/// [`check_conditions_with`] at the default equality tolerance.
pub fn check_conditions(p: &ProblemSpec) -> Result<ConditionReport> {
    check_conditions_with(p, DEFAULT_TOL_EQ)
}

/// Evaluates the condition set matching `p.kind`.
pub fn check_conditions_with(p: &ProblemSpec, tol_eq: f64) -> Result<ConditionReport> {
    p.validate()?;
    let CountStats { mean: e_n, variance: var_n, second_moment: e_n2, .. } = count_stats(&p.n);
    let e_t = p.t.mean();
    let e_t2 = p.t.moment(2.0);
    let var_t = p.t.variance();
    let rho = if e_t > 0.0 { e_t2 / e_t } else { f64::NAN };
    let m = p.floor() as f64;
    let k_mean = e_n + m;

    // A strict inequality is the complement of the tolerant equality: values
    // within `tol_eq` of the boundary count as on it.
    let lt = |a: f64, b: f64| a < b - tol_eq;

    let mut c = ClauseSet(Vec::new());
    let mut scalars = Scalars {
        e_n,
        var_n,
        e_n2,
        e_t,
        e_t2,
        var_t,
        rho,
        e_b: None,
        var_b: None,
        mu: None,
    };
    let mut uniqueness_certified = true;
    let mut trivial_case = false;

    match p.kind {
        EquationKind::Homogeneous | EquationKind::CommonT => {
            c.push("E[N]E[T]=1", (e_n * e_t - 1.0).abs() <= tol_eq);
            c.push("0<E[T^2]", e_t2 > 0.0);
            c.push("E[T^2]<E[T]", lt(e_t2, e_t));
            c.push("E[T]<1", lt(e_t, 1.0));
            c.push("E[N^2]<inf", e_n2.is_finite());
        }
        EquationKind::Floored { m: 1 } => {
            c.push("E[N]=(1-E[T])/E[T]", (k_mean * e_t - 1.0).abs() <= tol_eq);
            c.push("0<E[T^2]", e_t2 > 0.0);
            c.push("E[T^2]<E[T]", lt(e_t2, e_t));
            c.push("E[T]<1", lt(e_t, 1.0));
            c.push("E[N^2]<inf", e_n2.is_finite());
        }
        EquationKind::Floored { .. } => {
            c.push("E[N]=(1-mE[T])/E[T]", (k_mean * e_t - 1.0).abs() <= tol_eq);
            c.push("0<E[T^2]", e_t2 > 0.0);
            c.push("E[T^2]<E[T]", lt(e_t2, e_t));
            c.push("E[T]<=1/m", e_t <= 1.0 / m + tol_eq);
            c.push("E[N^2]<inf", e_n2.is_finite());
        }
        EquationKind::Nonhomogeneous | EquationKind::NonhomogeneousCommonT => {
            let b = p.b.as_ref().expect("validated: B present");
            let e_b = b.mean();
            let var_b = b.variance();
            let ent = e_n * e_t;
            let ent2 = e_n * e_t2;
            let mu = e_b / (1.0 - ent);
            scalars.e_b = Some(e_b);
            scalars.var_b = Some(var_b);
            scalars.mu = (ent < 1.0).then_some(mu);
            c.push("E[B]>0", e_b > 0.0);
            c.push("0<E[N]E[T]", ent > 0.0);
            c.push("E[N]E[T]<1", lt(ent, 1.0));
            c.push("0<E[N]E[T^2]", ent2 > 0.0);
            c.push("E[N]E[T^2]<1", lt(ent2, 1.0));
            c.push("Pr(N=0)<1", p.n.prob_zero() < 1.0);
            c.push("Pr(T=0)<1", p.t.prob_positive() > 0.0);
            if let Some(given) = p.mu {
                c.push(
                    "mu=E[B]/(1-E[N]E[T])",
                    ent < 1.0 && (given - mu).abs() <= tol_eq * mu.abs().max(1.0),
                );
            }
            trivial_case = var_b + var_t + var_n == 0.0;
            uniqueness_certified = lt(e_t2, e_t);
        }
    }

    let failures: Vec<String> = c.0.iter().filter(|c| !c.holds).map(|c| c.name.clone()).collect();
    let satisfied = failures.is_empty();

    // Liu's conditions concern the total count of summands, N + m.
    let liu_alpha = solve_liu_alpha_for_mean(k_mean, &p.t, tol_eq);
    let ptn = p.t.prob_positive() * k_mean;
    let liu4 = ptn > 1.0 && liu_alpha.is_some_and(|a| a.derivative_condition());
    let tlogt = p.t.moment_log(1.0);
    let nlogn_finite = p.n.mean_nlogn().is_finite();
    let liu5 = ptn > 1.0 && (k_mean * e_t - 1.0).abs() <= tol_eq && nlogn_finite && tlogt < 0.0;
    let premise = (k_mean * e_t - 1.0).abs() <= tol_eq && e_t2 > 0.0 && lt(e_t2, e_t) && lt(e_t, 1.0);
    let prop1 = !premise || (ptn > 1.0 && tlogt < 0.0);

    let verdict = match (satisfied, uniqueness_certified) {
        (false, _) => Verdict::NotSatisfied,
        (true, true) => Verdict::Unique,
        (true, false) => Verdict::ExistsUniquenessNotCertified,
    };
    let laws_degenerate = var_n == 0.0 && var_t == 0.0 && scalars.var_b.is_none_or(|v| v == 0.0);
    Ok(ConditionReport {
        kind: p.kind,
        satisfied,
        verdict,
        scalars,
        clauses: c.0,
        failures,
        liu_alpha,
        liu4,
        liu5,
        prop1,
        uniqueness_certified: satisfied && uniqueness_certified,
        trivial_case,
        degenerate_solution: satisfied && laws_degenerate,
    })
}

/// Smallest `α ∈ (0, 1]` with `E[N] E[T^α] = 1`, if any.
pub fn solve_liu_alpha(n: &CountLaw, t: &DiscreteMeasure) -> Option<LiuAlpha> {
    solve_liu_alpha_for_mean(count_stats(n).mean, t, DEFAULT_TOL_EQ)
}

/// `φ(α) = mean · E[T^α]` is log-convex, so its first crossing of 1 is a
/// downward one. The interval is scanned for the first sign change of
/// `φ - 1`, which is then refined by bisection; a root at `α = 1` within
/// `tol_eq` is accepted when no earlier crossing exists.
pub(crate) fn solve_liu_alpha_for_mean(mean: f64, t: &DiscreteMeasure, tol_eq: f64) -> Option<LiuAlpha> {
    if !(mean > 0.0) || t.prob_positive() == 0.0 {
        return None;
    }
    let phi = |a: f64| {
        if a == 0.0 {
            mean * t.prob_positive()
        } else {
            mean * t.moment(a)
        }
    };
    let g = |a: f64| phi(a) - 1.0;
    let root = |alpha: f64| LiuAlpha { alpha, tlogt: t.moment_log(alpha) };

    let mut lo = 0.0;
    let mut g_lo = g(0.0);
    if g_lo == 0.0 {
        // φ(0+) = 1 exactly: no root in the open interval from the left limit
        g_lo = g(f64::MIN_POSITIVE.sqrt());
    }
    for i in 1..=LIU_SCAN_CELLS {
        let hi = i as f64 / LIU_SCAN_CELLS as f64;
        let g_hi = g(hi);
        if g_hi == 0.0 {
            return Some(root(hi));
        }
        if g_lo.signum() != g_hi.signum() {
            if i == LIU_SCAN_CELLS && g_hi.abs() <= tol_eq {
                return Some(root(1.0));
            }
            let (mut a, mut b) = (lo, hi);
            let sign_a = g_lo.signum();
            for _ in 0..LIU_BISECTION_STEPS {
                let mid = 0.5 * (a + b);
                if mid == a || mid == b {
                    break;
                }
                if g(mid).signum() == sign_a {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            let alpha = 0.5 * (a + b);
            return (alpha > 0.0).then(|| root(alpha));
        }
        lo = hi;
        g_lo = g_hi;
    }
    (g(1.0).abs() <= tol_eq).then(|| root(1.0))
}
