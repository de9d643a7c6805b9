//! Distributional fixed-point equations of smoothing-transform type:
//! `X =d B + Σ_{i=1}^{N+m} T_i X_i` and the shared-weight variant
//! `X =d B + T Σ_{i=1}^{N} X_i`.
//!
//! * [`measures`]: discrete laws, count laws, exact sum/product arithmetic.
//! * [`transforms`]: Laplace transforms, pgfs, moment bounds, grid curves.
//! * [`conditions`]: moment conditions for a unique finite-variance solution.
//! * [`solver`]: closed-form moments and the monotone Picard solver.
//! * [`simulate`]: Monte Carlo oracle and a one-sided stable sampler.
//!
//! ```
//! use pfp_core::{check_conditions, closed_form_moments, CountLaw, DiscreteMeasure, ProblemSpec};
//!
//! // X = T(X_1 + ... + X_N), N geometric on {1, 2, ...}, T = 1/2: exponential
//! let t = DiscreteMeasure::dirac(0.5).unwrap();
//! let p = ProblemSpec::homogeneous(CountLaw::geometric1(0.5).unwrap(), t, 1.0).unwrap();
//! assert!(check_conditions(&p).unwrap().satisfied);
//! assert_eq!(closed_form_moments(&p).unwrap().variance, 1.0);
//! ```

// `!(x > 0.0)` guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod error;
pub mod measures;
pub mod simulate;
pub mod solver;
pub mod transforms;

pub use conditions::{
    check_conditions, check_conditions_with, solve_liu_alpha, Clause, ConditionReport, EquationKind, LiuAlpha,
    ProblemSpec, Scalars, Verdict, DEFAULT_TOL_EQ,
};
pub use error::{Error, Result};
pub use measures::{
    count_stats, eckberg_two_atom, length_biased, merge_atoms, moment, weighted_sum_law, AtomBudget, CountLaw,
    CountStats, DiscreteMeasure, MomentPair,
};
pub use simulate::{mc_estimate, sample_once, sample_positive_stable, McReport};
pub use solver::{
    closed_form_moments, closed_form_moments_with, picard_step, solve, Backend, Iterate, MomentReport, SolveOptions, SolveResult,
};
pub use transforms::{
    curve_csv, eckberg_bound, equilibrium_lst, lst_eval, parse_curve_csv, pgf_eval, stable_map, LogGrid, Lst,
    LstCurve,
};
