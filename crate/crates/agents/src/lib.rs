//! Learning agents for the RIS downlink MDP.
//!
//! - [`neural`]: dense nets with reverse-mode gradients, Adam, squashed
//!   Gaussian heads
//! - [`buffer`]: replay ring with a per-task index for context sampling
//! - [`encoder`] / [`decoder`] / [`elbo`]: the task-inference model
//! - [`sac`], [`ddpg`]: actor-critic learners
//! - [`farm`]: the meta-agent that conditions SAC on inferred task encodings,
//!   plus its task map
//! - [`trainer`]: rollout plumbing shared by the learners, DDPG training
//! - [`toy`]: a one-step continuous bandit for sanity checks

pub mod buffer;
pub mod ddpg;
pub mod decoder;
pub mod elbo;
pub mod encoder;
pub mod farm;
pub mod gradcheck;
pub mod neural;
pub mod sac;
pub mod scaling;
pub mod toy;
pub mod trainer;

pub use buffer::ReplayBuffer;
pub use ddpg::{Ddpg, DdpgConfig};
pub use decoder::DecoderNets;
pub use encoder::{EncoderNets, EncoderOutput, InferMode, TaskEncoding};
pub use farm::{FarmAgent, FarmConfig, TaskMap};
pub use neural::{Activation, Adam, AdamConfig, Head, Mlp, Parameterized};
pub use sac::{Sac, SacConfig};
pub use scaling::ActionScaler;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("backward called without a recorded forward pass")]
    NoTape,
    #[error("cannot sample from an empty buffer")]
    EmptyBuffer,
    #[error("no transitions stored for task {0}")]
    UnknownTask(u64),
    #[error("context is empty")]
    EmptyContext,
    #[error("task map has no entries")]
    EmptyTaskMap,
    #[error("non-finite {what} at epoch {epoch}: {detail}")]
    Diverged { what: String, epoch: usize, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] rismeta_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AgentError> = std::result::Result<T, E>;
