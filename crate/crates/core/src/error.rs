//! Crate-wide error type.
//!
//! Every fallible operation in the toolkit returns [`Error`]. Variants are
//! shared across modules because the same failure modes recur (domain
//! violations, degenerate root structure, runaway branching populations),
//! and the harness wants a single type to report from.

use thiserror::Error;

/// Unified error type for model construction, analysis, and simulation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// Model parameters violate a structural invariant (ordering, range,
    /// dimension), detected at construction time.
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    /// Nonlinear-voter parameters fall outside the admissible bistable
    /// region (b1 > 0 and 3 b1 + b2 < 0 required).
    #[error("nonlinear voter parameters outside region 2: {0}")]
    NotInRegion2(String),

    /// An argument left the domain an operation is defined on.
    #[error("domain error: {0}")]
    DomainError(String),

    /// g(p) - p has a multiple root in (0, 1), so the bistable fixed-point
    /// structure is degenerate (e.g. sexual reproduction at beta = 4).
    #[error("degenerate fixed-point structure: {0}")]
    DegenerateRoots(String),

    /// The fixed-point set lacks the stable/unstable/stable interior triple.
    #[error("no bistable fixed-point triple: {0}")]
    NotBistable(String),

    /// An iteration exceeded its step cap without meeting its stopping rule.
    #[error("iteration cap exceeded: {0}")]
    CapExceeded(String),

    /// A branching population outgrew its particle cap.
    #[error("branching population exceeded cap: {0}")]
    ExplosionGuard(String),

    /// A vote rule was applied to a tree of the wrong arity.
    #[error("arity mismatch: {0}")]
    ArityMismatch(String),

    /// An estimator was asked to summarize zero trials.
    #[error("empty estimate: {0}")]
    EmptyEstimate(String),

    /// Requested lattice rates imply an event budget beyond the configured cap.
    #[error("rate overflow: {0}")]
    RateOverflow(String),

    /// Requested time step violates the explicit-scheme stability bounds.
    #[error("stability violation: {0}")]
    StabilityViolation(String),

    /// A solution left [0, 1] beyond round-off tolerance (clamping is
    /// forbidden; escape is always reported).
    #[error("solution escaped [0,1]: {0}")]
    RangeEscape(String),

    /// A tracked level-set crossing could not be located.
    #[error("front lost: {0}")]
    FrontLost(String),

    /// A shrinking sphere was queried past its extinction time.
    #[error("sphere extinct: {0}")]
    Extinct(String),

    /// The forward reaction term has no positive roots (sexual reproduction
    /// with beta < 4).
    #[error("no positive equilibria: {0}")]
    NoPositiveRoots(String),

    /// Experiment configuration is inconsistent or unsupported.
    #[error("configuration error: {0}")]
    ConfigError(String),

    /// I/O failure while writing experiment artifacts.
    #[error("io error: {0}")]
    Io(String),

    /// Input text could not be parsed (tree files, config files).
    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
