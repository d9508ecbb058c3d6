use thiserror::Error;

use crate::dynamics::QuadrotorState;

/// Errors raised anywhere in the navigation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("simulation diverged: non-finite state {state:?}")]
    SimulationDiverged { state: Box<QuadrotorState> },

    #[error("invalid quadrotor parameters: {0}")]
    InvalidParams(String),

    #[error("trajectory planning failed: {0}")]
    Planning(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("scenario generation failed: {0}")]
    Scenario(String),

    #[error("non-finite activation in layer `{layer}`")]
    NonFiniteActivation { layer: &'static str },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("episode log error: {0}")]
    Log(String),

    #[error("audit failure: {0}")]
    Audit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
