//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by series algebra, assumption checks, KAM cycles and the driver.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum KamError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("invalid domain: require 0 < s <= 1 and 0 < r <= 1, got s={s}, r={r}")]
    InvalidDomain { s: f64, r: f64 },

    #[error("need at least 2 distinct samples, got {0}")]
    TooFewSamples(usize),

    #[error("duplicate parameter sample at {0:?}")]
    DuplicateSample(Vec<f64>),

    #[error("boundary too close to target: margin {margin:.3e} <= {factor} x sample variation {variation:.3e}")]
    BoundaryTooClose {
        margin: f64,
        variation: f64,
        factor: f64,
    },

    #[error("Brouwer degree unsupported in dimension {0} (only n <= 2)")]
    UnsupportedDimension(usize),

    #[error("small divisor breach at k={k:?}: |<k,omega>|={value:.3e} <= gamma/|k|^tau={bound:.3e}")]
    SmallDivisorBreach { k: Vec<i32>, value: f64, bound: f64 },

    #[error("safety margin breach at k={k:?}: ||<k,d_y hbar>|| |k|^tau = {value:.3e} >= gamma0/2 = {bound:.3e}")]
    SafetyMarginBreach { k: Vec<i32>, value: f64, bound: f64 },

    #[error("homological residual {got:.3e} exceeds contract {bound:.3e}")]
    HomologicalResidual { got: f64, bound: f64 },

    #[error("Lie series stalled at term {term}: consecutive norm ratio {ratio:.3e} >= 0.5")]
    LieSeriesStalled { term: usize, ratio: f64 },

    #[error("action shift too large: |shift|={shift:.3e} >= s/4={bound:.3e}")]
    ShiftTooLarge { shift: f64, bound: f64 },

    #[error("no sub-box with nonzero Brouwer degree at level {level} (frequency equation has no root in the search box)")]
    DegreeVanished { level: usize },

    #[error("root box touches the search box boundary at {xi:?}")]
    OutsideSearchBox { xi: Vec<f64> },

    #[error("epsilon too large for {mode} mode: {reason}")]
    EpsilonTooLarge { mode: String, reason: String },

    #[error("Taylor order m={m} too low: require m > L+1 with L={l}")]
    OrderTooLow { m: u32, l: u32 },

    #[error("schedule unsound at step {step}: mu={mu:.3e} not in (0,1)")]
    ScheduleUnsound { step: usize, mu: f64 },

    #[error("perturbation norm increased for 3 consecutive steps (diverged at step {step})")]
    Diverged { step: usize },

    #[error("assumption {name} violated: {detail}")]
    AssumptionViolated { name: String, detail: String },

    #[error("config error at `{path}`: {reason}")]
    ConfigError { path: String, reason: String },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, KamError>;
