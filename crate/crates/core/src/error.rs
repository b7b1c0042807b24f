use thiserror::Error;

/// Errors raised by samplers, oracles and the model zoo.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("noise atom shape mismatch: model expects {expected}, atom carries {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("no coalescence by depth cap {cap}")]
    NoCoalescence { cap: u64 },

    #[error("order violation: {lower} precedes {upper} but their images under atom {atom} do not")]
    OrderViolation {
        lower: String,
        upper: String,
        atom: String,
    },

    #[error("scripted noise exhausted at time index {t}")]
    NoiseExhausted { t: i64 },

    #[error("chain is reducible: state {from} cannot reach state {to}")]
    Reducible { from: usize, to: usize },

    #[error("chain is periodic with period {period}")]
    Periodic { period: usize },

    #[error("stationary solvers disagree: max deviation {deviation:e}")]
    SolverDisagreement { deviation: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("{what} exceeded iteration cap {cap}")]
    IterationCap { what: &'static str, cap: u64 },

    #[error("insufficient recorded trajectory: need index {need}, have {have}")]
    InsufficientTrajectory { need: usize, have: usize },

    #[error("control-variate plan built for (k={plan_k}, L={plan_lag}) applied to pair with (k={k}, L={lag})")]
    PlanMismatch {
        plan_k: usize,
        plan_lag: usize,
        k: usize,
        lag: usize,
    },

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("perfect sampler failed {attempts} times in a row: {last}")]
    SamplerExhausted { attempts: u32, last: Box<Error> },
}

impl Error {
    /// True when the error reports a cap breach (depth, iteration or retry cap).
    pub fn is_cap_breach(&self) -> bool {
        matches!(
            self,
            Error::NoCoalescence { .. }
                | Error::IterationCap { .. }
                | Error::SamplerExhausted { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
