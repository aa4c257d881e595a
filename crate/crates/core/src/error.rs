use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("truncation diverged: tail {tail:.3e} still above tolerance at N = {n}")]
    TruncationDiverged { n: usize, tail: f64 },

    #[error("spectral domain error: {0}")]
    SpectralDomain(String),

    #[error("no finite bound: d(x) + nu - b(x) never becomes positive")]
    NoBound,

    #[error("model violates the subcriticality-at-infinity condition (margin {margin:.6e}); no nontrivial equilibrium")]
    H2Violated { margin: f64 },

    #[error("fixed point solver failed: {0}")]
    FixedPointFailure(String),

    #[error("step size underflow at t = {t:.6e} (h = {h:.3e}); try a larger truncation or smaller rates")]
    Stiffness { t: f64, h: f64 },

    #[error("integration diverged at t = {t:.6e}: {reason}")]
    IntegrationDiverged { t: f64, reason: String },

    #[error("comparison bound violated at t = {t:.6e}: s = {s:.12e} > bound {bound:.12e}")]
    ComparisonViolated { t: f64, s: f64, bound: f64 },

    #[error("coupling invariant broken at t = {t:.6e}: {detail}")]
    CouplingBug { t: f64, detail: String },

    #[error("independent solvers disagree by {gap:.3e}: {what}")]
    OracleMismatch { what: String, gap: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
