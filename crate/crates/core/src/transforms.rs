//! Laplace–Stieltjes transforms, probability generating functions and the
//! moment envelopes that bracket every transform with known first two
//! moments.
//!
//! Transforms are evaluated in log space throughout: a degenerate solution
//! has `F̂(s) = e^{-μs}`, which underflows long before the top of the default
//! grid, while its logarithm stays representable.
//!
//! [`LstCurve`] stores `ln F̂` on a log-spaced grid and interpolates it in
//! `(ln s, ln F̂)` with six-point Lagrange polynomials, bracketed by the two
//! neighbouring grid values so the result stays monotone; a monotone cubic
//! Hermite scheme takes over where the stencil contains `F̂ = 0`. Outside the
//! grid it falls back on the moment information: below, the exact two-term
//! expansion plus a quartic remainder fitted to the first grid points; above,
//! the midpoint of the analytic envelope. Both are clamped to the envelope.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{kahan_sum, CountLaw, DiscreteMeasure, MomentPair};

pub const DEFAULT_S_MIN: f64 = 1e-3;
pub const DEFAULT_S_MAX: f64 = 1e3;
pub const DEFAULT_GRID_POINTS: usize = 513;

/// Anything whose Laplace–Stieltjes transform can be evaluated.
pub trait Lst {
    /// `ln F̂(s)` for `s >= 0`.
    fn log_lst(&self, s: f64) -> f64;

    /// `1 - F̂(s)`, computed without cancellation for small `s`.
    fn one_minus_lst(&self, s: f64) -> f64 {
        -self.log_lst(s).exp_m1()
    }

    /// Exact first two moments, when finite and positive.
    fn moment_pair(&self) -> Option<MomentPair>;

    fn lst(&self, s: f64) -> f64 {
        self.log_lst(s).exp()
    }
}

impl Lst for DiscreteMeasure {
    fn log_lst(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        // log-sum-exp over atoms, anchored at the smallest location
        let atoms = self.atoms();
        let x0 = atoms[0].0;
        let tail = kahan_sum(atoms.iter().map(|&(x, w)| w * (-s * (x - x0)).exp()));
        -s * x0 + tail.ln()
    }

    fn one_minus_lst(&self, s: f64) -> f64 {
        if s * self.max_location() > 1.0 {
            return -self.log_lst(s).exp_m1();
        }
        kahan_sum(self.atoms().iter().map(|&(x, w)| -w * (-s * x).exp_m1()))
    }

    fn moment_pair(&self) -> Option<MomentPair> {
        MomentPair::new(self.moment(1.0), self.moment(2.0)).ok()
    }
}

/// `Σ mass · e^{-s · location}`, or the interpolated curve value.
pub fn lst_eval<L: Lst + ?Sized>(src: &L, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::NegativeS(s));
    }
    Ok(src.lst(s))
}

/// Eckberg's upper bound `1 - μ₁²/μ₂ + (μ₁²/μ₂) e^{-(μ₂/μ₁)s}`.
pub fn eckberg_bound(mp: MomentPair, s: f64) -> Result<f64> {
    let mp = MomentPair::new(mp.mu1, mp.mu2)?;
    if !(s >= 0.0) {
        return Err(Error::NegativeS(s));
    }
    Ok(log_eckberg(mp, s).exp())
}

pub(crate) fn log_eckberg(mp: MomentPair, s: f64) -> f64 {
    let MomentPair { mu1, mu2 } = mp;
    let q = mu1 * mu1 / mu2;
    let rest = (mu2 - mu1 * mu1) / mu2;
    if rest <= 0.0 {
        return -mu1 * s;
    }
    (rest + q * (-(mu2 / mu1) * s).exp()).ln()
}

/// Lower envelope `e^{-μ₁ s}` (Jensen), in log form.
pub(crate) fn log_lower(mp: MomentPair, s: f64) -> f64 {
    -mp.mu1 * s
}

/// `P_N(z) = E[z^N]` for `z ∈ [0, 1]`.
pub fn pgf_eval(n: &CountLaw, z: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::ZOutOfRange(z));
    }
    Ok(log_pgf(n, z.ln()).exp())
}

/// `ln P_N(e^{lz})` for `lz ∈ [-∞, 0]`.
pub fn log_pgf(n: &CountLaw, lz: f64) -> f64 {
    match n {
        CountLaw::Degenerate { k } => {
            if *k == 0 {
                0.0
            } else {
                *k as f64 * lz
            }
        }
        CountLaw::Pmf { pmf } => {
            let terms: Vec<f64> = pmf
                .iter()
                .filter(|e| e.1 > 0.0)
                .map(|&(k, w)| if k == 0 { w.ln() } else { w.ln() + k as f64 * lz })
                .collect();
            log_sum_exp(&terms)
        }
        CountLaw::Geometric1 { p } => {
            if lz == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            p.ln() + lz - (-(1.0 - p) * lz.exp()).ln_1p()
        }
        CountLaw::Geometric0 { p } => p.ln() - (-(1.0 - p) * lz.exp()).ln_1p(),
        CountLaw::Poisson { lambda } => lambda * lz.exp_m1(),
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + kahan_sum(terms.iter().map(|t| (t - max).exp())).ln()
}

/// Value of the first-order equilibrium transform at `s`, with that law's
/// mean `μ₂ / (2μ₁)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub value: f64,
    pub mean: f64,
}

/// `(1 - F̂(s)) / (μ₁ s)` for `s > 0`.
pub fn equilibrium_lst<L: Lst + ?Sized>(src: &L, s: f64) -> Result<Equilibrium> {
    if s == 0.0 {
        return Err(Error::ZeroS);
    }
    if !(s > 0.0) {
        return Err(Error::NegativeS(s));
    }
    let mp = src.moment_pair().ok_or(Error::ZeroMean)?;
    Ok(Equilibrium {
        value: src.one_minus_lst(s) / (mp.mu1 * s),
        mean: mp.equilibrium_mean(),
    })
}

/// `F̂(s^α)`: the transform of `S_α X^{1/α}` where `S_α` is positive
/// α-stable with transform `e^{-s^α}`.
pub fn stable_map<L: Lst + ?Sized>(src: &L, alpha: f64, s: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    if !(s >= 0.0) {
        return Err(Error::NegativeS(s));
    }
    Ok(src.lst(s.powf(alpha)))
}

/// Log-spaced abscissae `s_i = exp(ln s_min + i h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogGrid {
    s_min: f64,
    s_max: f64,
    points: Vec<f64>,
    #[serde(skip)]
    u0: f64,
    #[serde(skip)]
    h: f64,
}

impl Default for LogGrid {
    fn default() -> Self {
        LogGrid::new(DEFAULT_S_MIN, DEFAULT_S_MAX, DEFAULT_GRID_POINTS).expect("valid default grid")
    }
}

impl LogGrid {
    pub fn new(s_min: f64, s_max: f64, n: usize) -> Result<Self> {
        if !(s_min > 0.0 && s_max > s_min && s_max.is_finite() && n >= 5) {
            return Err(Error::InvalidCurve(format!(
                "grid [{s_min}, {s_max}] with {n} points"
            )));
        }
        let u0 = s_min.ln();
        let h = (s_max.ln() - u0) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| (u0 + i as f64 * h).exp()).collect();
        points[0] = s_min;
        points[n - 1] = s_max;
        Ok(LogGrid { s_min, s_max, points, u0, h })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn s_min(&self) -> f64 {
        self.s_min
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    /// Interval index and fractional position of `s` in index units.
    fn locate(&self, s: f64) -> (usize, f64) {
        let x = (s.ln() - self.u0) / self.h;
        let n = self.points.len();
        let i = (x.floor().max(0.0) as usize).min(n - 2);
        (i, (x - i as f64).clamp(0.0, 1.0))
    }
}

/// A transform sampled on a [`LogGrid`] with its exact first two moments.
#[derive(Debug, Clone, PartialEq)]
pub struct LstCurve {
    grid: LogGrid,
    log_values: Vec<f64>,
    slopes: Vec<f64>,
    moments: MomentPair,
    /// Cubic and quartic coefficients of `1 - F̂` below the grid.
    tail: (f64, f64),
}

impl LstCurve {
    /// Builds a curve from `ln F̂` at the grid points.
    pub fn from_log_values(grid: LogGrid, log_values: Vec<f64>, moments: MomentPair) -> Result<Self> {
        if log_values.len() != grid.len() {
            return Err(Error::InvalidCurve(format!(
                "{} values for {} grid points",
                log_values.len(),
                grid.len()
            )));
        }
        if let Some(v) = log_values.iter().find(|v| !(**v <= 0.0) || v.is_nan()) {
            return Err(Error::InvalidCurve(format!("log value {v} outside [-inf, 0]")));
        }
        let slopes = monotone_slopes(&log_values);
        let tail = small_s_tail(&grid, &log_values, moments);
        Ok(LstCurve { grid, log_values, slopes, moments, tail })
    }

    /// Samples `f(s) = ln F̂(s)` at every grid point.
    pub fn from_log_fn(grid: LogGrid, moments: MomentPair, f: impl Fn(f64) -> f64) -> Result<Self> {
        let vals = grid.points().iter().map(|&s| f(s)).collect();
        Self::from_log_values(grid, vals, moments)
    }

    /// Samples an exactly evaluable source on `grid`.
    pub fn from_source<L: Lst + ?Sized>(grid: LogGrid, src: &L) -> Result<Self> {
        let mp = src.moment_pair().ok_or(Error::ZeroMean)?;
        Self::from_log_fn(grid, mp, |s| src.log_lst(s))
    }

    pub fn grid(&self) -> &LogGrid {
        &self.grid
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn values(&self) -> Vec<f64> {
        self.log_values.iter().map(|v| v.exp()).collect()
    }

    pub fn moments(&self) -> MomentPair {
        self.moments
    }

    /// True when `s` lies above the grid, where the envelope midpoint is used.
    pub fn is_extrapolated(&self, s: f64) -> bool {
        s > self.grid.s_max
    }

    fn taylor_one_minus(&self, s: f64) -> f64 {
        let MomentPair { mu1, mu2 } = self.moments;
        let (c3, c4) = self.tail;
        // 1 - F̂ lies in [1 - eckberg(s), 1 - e^{-μ₁s}]
        let lo = -log_eckberg(self.moments, s).exp_m1();
        let hi = -(-mu1 * s).exp_m1();
        (mu1 * s - 0.5 * mu2 * s * s + s * s * s * (c3 + c4 * s)).clamp(lo.min(hi), hi)
    }

    /// Largest violation of the shape constraints on grid values: first
    /// differences must be `<= 0` and second differences (scaled to the
    /// local spacing, i.e. convexity in `s`) `>= 0`.
    pub fn shape_violations(&self) -> (f64, f64) {
        let v = self.values();
        let s = self.grid.points();
        let mut mono: f64 = 0.0;
        let mut conv: f64 = 0.0;
        for i in 0..v.len() - 1 {
            mono = mono.max(v[i + 1] - v[i]);
        }
        for i in 1..v.len() - 1 {
            let ratio = (s[i + 1] - s[i]) / (s[i] - s[i - 1]);
            let d2 = (v[i + 1] - v[i]) - ratio * (v[i] - v[i - 1]);
            conv = conv.max(-d2);
        }
        (mono, conv)
    }

    /// Largest envelope violation `e^{-μ₁s} <= F̂(s) <= eckberg(s)` on the
    /// grid, measured on values.
    pub fn envelope_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (&s, &lv) in self.grid.points().iter().zip(&self.log_values) {
            let v = lv.exp();
            worst = worst.max(log_lower(self.moments, s).exp() - v);
            worst = worst.max(v - log_eckberg(self.moments, s).exp());
        }
        worst
    }

    /// Six-point Lagrange interpolation of `ln F̂` in index units around the
    /// interval `[i, i + 1]`; `None` if the stencil holds a zero value.
    fn lagrange(&self, i: usize, t: f64) -> Option<f64> {
        const W: usize = 6;
        let n = self.log_values.len();
        if n < W {
            return None;
        }
        let start = (i as isize - 2).clamp(0, (n - W) as isize) as usize;
        let ys = &self.log_values[start..start + W];
        if ys.iter().any(|y| !y.is_finite()) {
            return None;
        }
        let x = (i - start) as f64 + t;
        let mut acc = 0.0;
        for (j, &yj) in ys.iter().enumerate() {
            let mut l = 1.0;
            for k in 0..W {
                if k != j {
                    l *= (x - k as f64) / (j as f64 - k as f64);
                }
            }
            acc += l * yj;
        }
        Some(acc)
    }

    /// Writes the `s,value` dump.
    pub fn to_csv(&self) -> String {
        curve_csv(self.grid.points(), &self.values())
    }
}

impl Lst for LstCurve {
    fn log_lst(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        let g = &self.grid;
        if s < g.s_min {
            return (-self.taylor_one_minus(s)).ln_1p();
        }
        if s > g.s_max {
            let lower = log_lower(self.moments, s).exp();
            let upper = log_eckberg(self.moments, s)
                .min(*self.log_values.last().expect("non-empty curve"))
                .exp();
            if upper <= lower {
                return log_lower(self.moments, s);
            }
            return (0.5 * (lower + upper)).ln();
        }
        let (i, t) = g.locate(s);
        let (y0, y1) = (self.log_values[i], self.log_values[i + 1]);
        if y0 == y1 {
            return y0;
        }
        if let Some(v) = self.lagrange(i, t) {
            // bracketing by the interval's endpoints keeps the curve monotone;
            // neighbours may be out of order by rounding
            return v.clamp(y0.min(y1), y0.max(y1));
        }
        let (d0, d1) = (self.slopes[i], self.slopes[i + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        (h00 * y0 + h10 * d0 + h01 * y1 + h11 * d1).min(0.0)
    }

    fn one_minus_lst(&self, s: f64) -> f64 {
        if s > 0.0 && s < self.grid.s_min {
            return self.taylor_one_minus(s);
        }
        -self.log_lst(s).exp_m1()
    }

    fn moment_pair(&self) -> Option<MomentPair> {
        Some(self.moments)
    }
}

/// Fits `1 - F̂(s) = μ₁s - μ₂s²/2 + c₃s³ + c₄s⁴` through the first two grid
/// values. The exact moments fix the low-order terms; the fitted remainder
/// keeps below-grid values accurate to `O(s⁵)` instead of `O(s³)`.
fn small_s_tail(grid: &LogGrid, log_values: &[f64], mp: MomentPair) -> (f64, f64) {
    let s = grid.points();
    let rem = |i: usize| {
        let om = -log_values[i].exp_m1();
        (om - mp.mu1 * s[i] + 0.5 * mp.mu2 * s[i] * s[i]) / (s[i] * s[i] * s[i])
    };
    let (r0, r1) = (rem(0), rem(1));
    let c4 = (r1 - r0) / (s[1] - s[0]);
    let c3 = r0 - c4 * s[0];
    if c3.is_finite() && c4.is_finite() && mp.mu1 * s[0] < 0.1 {
        (c3, c4)
    } else {
        (0.0, 0.0)
    }
}

/// Node derivatives (per grid step) for a non-increasing sequence: fourth
/// order finite differences, limited so that the Hermite interpolant stays
/// monotone (`|d| <= 3 min(|Δ_left|, |Δ_right|)`).
fn monotone_slopes(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let finite = |i: usize| y[i].is_finite();
    let mut d = vec![0.0; n];
    for i in 0..n {
        let raw = if i >= 2 && i + 2 < n && (i - 2..=i + 2).all(finite) {
            (y[i - 2] - 8.0 * y[i - 1] + 8.0 * y[i + 1] - y[i + 2]) / 12.0
        } else if i == 0 && n >= 5 && (0..5).all(finite) {
            (-25.0 * y[0] + 48.0 * y[1] - 36.0 * y[2] + 16.0 * y[3] - 3.0 * y[4]) / 12.0
        } else if i == 1 && n >= 5 && (0..5).all(finite) {
            (-3.0 * y[0] - 10.0 * y[1] + 18.0 * y[2] - 6.0 * y[3] + y[4]) / 12.0
        } else if i == n - 1 && n >= 5 && (n - 5..n).all(finite) {
            (25.0 * y[n - 1] - 48.0 * y[n - 2] + 36.0 * y[n - 3] - 16.0 * y[n - 4] + 3.0 * y[n - 5]) / 12.0
        } else if i == n - 2 && n >= 5 && (n - 5..n).all(finite) {
            (3.0 * y[n - 1] + 10.0 * y[n - 2] - 18.0 * y[n - 3] + 6.0 * y[n - 4] - y[n - 5]) / 12.0
        } else if i > 0 && i + 1 < n && finite(i - 1) && finite(i + 1) {
            (y[i + 1] - y[i - 1]) / 2.0
        } else {
            0.0
        };
        let left = if i > 0 { y[i] - y[i - 1] } else { y[1] - y[0] };
        let right = if i + 1 < n { y[i + 1] - y[i] } else { y[n - 1] - y[n - 2] };
        let bound = 3.0 * left.abs().min(right.abs());
        d[i] = if !raw.is_finite() || !bound.is_finite() || left > 0.0 || right > 0.0 {
            0.0
        } else {
            raw.clamp(-bound, 0.0)
        };
    }
    d
}

/// `s,value` CSV with 17 significant digits.
pub fn curve_csv(grid: &[f64], values: &[f64]) -> String {
    let mut out = String::with_capacity(grid.len() * 48 + 8);
    out.push_str("s,value\n");
    for (s, v) in grid.iter().zip(values) {
        let _ = writeln!(out, "{s:.16e},{v:.16e}");
    }
    out
}

/// Parses a dump written by [`curve_csv`].
pub fn parse_curve_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "s,value" => {}
        other => return Err(Error::InvalidCurve(format!("bad header {other:?}"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (a, b) = l
                .split_once(',')
                .ok_or_else(|| Error::InvalidCurve(format!("bad row {l:?}")))?;
            let s = a.trim().parse::<f64>().map_err(|e| Error::InvalidCurve(e.to_string()))?;
            let v = b.trim().parse::<f64>().map_err(|e| Error::InvalidCurve(e.to_string()))?;
            Ok((s, v))
        })
        .collect()
}
