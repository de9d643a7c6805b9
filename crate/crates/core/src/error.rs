use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("atom location {0} is negative")]
    NegativeLocation(f64),
    #[error("atom mass {0} is not positive")]
    NonPositiveMass(f64),
    #[error("masses sum to {0}, expected 1")]
    MassNotNormalized(f64),
    #[error("measure has zero mean")]
    ZeroMean,
    #[error("invalid moment pair: mu1 = {mu1}, mu2 = {mu2}")]
    InvalidMoments { mu1: f64, mu2: f64 },
    #[error("invalid count law: {0}")]
    InvalidCountLaw(String),
    #[error("count law has infinite support; use the grid backend")]
    InfiniteSupportCount,
    #[error("transform argument s = {0} is negative")]
    NegativeS(f64),
    #[error("transform argument must be strictly positive")]
    ZeroS,
    #[error("pgf argument z = {0} is outside [0, 1]")]
    ZOutOfRange(f64),
    #[error("stable index alpha = {0} is outside (0, 1)")]
    AlphaOutOfRange(f64),
    #[error("invalid problem: {0}")]
    SpecInvalid(String),
    #[error("moment conditions not satisfied: {0}")]
    ConditionsNotSatisfied(String),
    #[error("backend unsupported: {0}")]
    BackendUnsupported(String),
    #[error("iterate increased by {excess:e} at s = {s} on iteration {iteration}")]
    MonotonicityViolated { iteration: usize, s: f64, excess: f64 },
    #[error("no convergence after {0} iterations")]
    MaxIterExceeded(usize),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
}

impl Error {
    /// Stable machine-readable code, used in serialized reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NegativeLocation(_) => "negative_location",
            Error::NonPositiveMass(_) => "non_positive_mass",
            Error::MassNotNormalized(_) => "mass_not_normalized",
            Error::ZeroMean => "zero_mean",
            Error::InvalidMoments { .. } => "invalid_moments",
            Error::InvalidCountLaw(_) => "invalid_count_law",
            Error::InfiniteSupportCount => "infinite_support_count",
            Error::NegativeS(_) => "negative_s",
            Error::ZeroS => "zero_s",
            Error::ZOutOfRange(_) => "z_out_of_range",
            Error::AlphaOutOfRange(_) => "alpha_out_of_range",
            Error::SpecInvalid(_) => "spec_invalid",
            Error::ConditionsNotSatisfied(_) => "conditions_not_satisfied",
            Error::BackendUnsupported(_) => "backend_unsupported",
            Error::MonotonicityViolated { .. } => "monotonicity_violated",
            Error::MaxIterExceeded(_) => "max_iter_exceeded",
            Error::InvalidCurve(_) => "invalid_curve",
        }
    }
}
