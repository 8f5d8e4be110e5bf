use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected {expected} entries, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid arm model: {0}")]
    InvalidModel(String),

    #[error("target at distance {distance:.4} is outside the reachable annulus [{inner:.4}, {outer:.4}]")]
    Unreachable { distance: f64, inner: f64, outer: f64 },

    #[error("inverse kinematics did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("joint {joint} angle {angle:.4} violates its limits")]
    JointLimit { joint: usize, angle: f64 },

    #[error("cannot shift waypoint {waypoint}: {source}")]
    ShiftFailed {
        waypoint: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("object `{0}` is not present in both environments")]
    UnknownObject(String),

    #[error("duplicate identifier `{0}`")]
    DuplicateId(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("index {index} outside the valid range {min}..={max}")]
    IndexOutOfRange { index: usize, min: usize, max: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("no single-waypoint correction reaches the target feature sum (best residual {best_residual:.3e})")]
    Infeasible { best_residual: f64 },

    #[error("samples are constant; a radial basis cannot be fitted")]
    DegenerateFit,

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("invalid deformation shape: {0}")]
    InvalidShape(String),

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("cannot {action} while the session is in phase {phase}")]
    IllegalPhase { phase: String, action: &'static str },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
