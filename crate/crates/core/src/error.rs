use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {context} at state {state:?}")]
    NonFinite {
        context: &'static str,
        state: Vec<f64>,
    },

    #[error("non-finite gradient entry at parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("{op} is not supported for this network: {reason}")]
    Unsupported {
        op: &'static str,
        reason: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("covering radius {eps} must be positive and below the margin rho = {rho}")]
    EpsilonTooLarge { eps: f64, rho: f64 },

    #[error("grid would hold {count} samples, above the cap of {cap}; raise epsilon")]
    GridCap { count: u128, cap: u64 },

    #[error("unknown benchmark `{0}` (expected dc_motor, pendulum or three_tank)")]
    UnknownBenchmark(String),

    #[error("power iteration did not converge after {0} iterations")]
    PowerIteration(usize),

    #[error("missing constant `{0}`")]
    MissingConstant(&'static str),

    #[error("the {0} subset of the dataset is empty")]
    EmptySubset(&'static str),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
}
