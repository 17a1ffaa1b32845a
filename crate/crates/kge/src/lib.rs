//! Desk-scale knowledge-graph embedding models (TransE, DistMult, RESCAL,
//! RotatE), training, evaluation into system outputs, a binary model file,
//! and a symmetry-violation debugger.

pub mod debugger;
pub mod eval;
pub mod io;
pub mod model;
pub mod train;

use thiserror::Error;

pub use debugger::{run_debug_session, DebugConfig, DebugReport, DebugSession, FinetuneLoss, Round, Strategy};
pub use eval::{evaluate_to_system_output, Directions, EvalOptions};
pub use io::{deserialize_model, load_model, save_model, serialize_model};
pub use model::{KgeModel, ModelKind};
pub use train::{train, LossKind, OptimizerKind, TrainConfig, TrainLog};

#[derive(Debug, Error)]
pub enum KgeError {
    #[error("lookup: {0}")]
    Lookup(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Divergence { epoch: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error("found {found} symmetry violations, need at least {needed}")]
    InsufficientViolations { found: usize, needed: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
