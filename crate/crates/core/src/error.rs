use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes; the command-line front end maps these onto exit
/// codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or out-of-range input.
    Invalid,
    /// Inputs are valid on their own but an operation's precondition fails.
    Precondition,
    /// The numerics broke down (non-finite values, failed decompositions).
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("chain length must be at least 2, got {0}")]
    ChainTooShort(usize),

    #[error("coupling J must be finite and positive, got {0}")]
    BadCoupling(f64),

    #[error("field h must be finite, got {0}")]
    BadField(f64),

    #[error("site index {site} out of range [1,{n}]")]
    SiteOutOfRange { site: usize, n: usize },

    #[error("noise site {0} listed more than once")]
    DuplicateSite(usize),

    #[error("noise must act on one or two sites, got {0}")]
    UnsupportedSiteCount(usize),

    #[error("gamma must be finite and nonnegative, got {0}")]
    NegativeGamma(f64),

    #[error("mode indices must satisfy 1 <= k < l <= {n}, got ({k},{l})")]
    BadModePair { k: usize, l: usize, n: usize },

    #[error("(N+1)/3 must be an integer, but N+1 = {0} is not divisible by 3")]
    NotDivisibleByThree(usize),

    #[error("invalid initial state: {0}")]
    InitialState(String),

    #[error("invalid time grid: {0}")]
    Grid(String),

    #[error("invalid trajectory configuration: {0}")]
    TrajectoryConfig(String),

    #[error("chain length {n} exceeds the reference engine cap {cap} (density matrix of dimension 2^N)")]
    ReferenceCap { n: usize, cap: usize },

    #[error("two-site quantity requested for identical sites {0} and {0}")]
    SameSite(usize),

    #[error("series lengths differ: {0} vs {1}")]
    MismatchedSeries(usize, usize),

    #[error("correlation matrix is not confined to the single-excitation sector (trace {0}); use the reference engine for this state")]
    NotSingleExcitation(f64),

    #[error("density matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPositive(f64),

    #[error("no decaying oscillating mode beyond the surviving one (largest oscillating decay {0:e})")]
    NoOscillatingMode(f64),

    #[error("non-finite value in trajectory {trajectory} at step {step}")]
    NonFinite { trajectory: u64, step: usize },

    #[error("{0}")]
    Precondition(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            ChainTooShort(_) | BadCoupling(_) | BadField(_) | SiteOutOfRange { .. }
            | DuplicateSite(_) | UnsupportedSiteCount(_) | NegativeGamma(_)
            | BadModePair { .. } | InitialState(_) | Grid(_) | TrajectoryConfig(_)
            | SameSite(_) | MismatchedSeries(..) => ErrorKind::Invalid,
            NotDivisibleByThree(_) | ReferenceCap { .. } | NotSingleExcitation(_)
            | NotPositive(_) | NoOscillatingMode(_) | Precondition(_) => ErrorKind::Precondition,
            NonFinite { .. } | Numerical(_) => ErrorKind::Numerical,
        }
    }
}
