use thiserror::Error;

/// Errors raised anywhere in the warning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ego pose at t={ego_t:.4} is stale for detection at t={det_t:.4}")]
    StaleEgo { det_t: f64, ego_t: f64 },

    #[error("timestamp went backwards: {prev:.6} -> {next:.6}")]
    NonMonotonicTime { prev: f64, next: f64 },

    #[error("measurement at t={meas_t:.4} is too far from filter time t={state_t:.4}")]
    MeasurementOutOfWindow { meas_t: f64, state_t: f64 },

    #[error("non-finite innovation")]
    NonFiniteInnovation,

    #[error("innovation covariance is singular; check measurement noise configuration")]
    SingularInnovation,

    #[error("track {id} already has a sample at t={t:.6}")]
    DuplicateSample { id: u64, t: f64 },

    #[error("cannot fit a trajectory: {0}")]
    DegenerateFit(&'static str),

    #[error("trajectory fit is not valid for prediction")]
    InvalidFit,

    #[error("invalid route: {0}")]
    InvalidRoute(String),

    #[error("degenerate route request: start equals destination")]
    DegenerateRouteRequest,

    #[error("route provider unreachable: {0}")]
    ProviderUnreachable(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("line {line}: {message}")]
    MalformedLog { line: usize, message: String },

    #[error("mismatched logs: {0}")]
    MismatchedLogs(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
