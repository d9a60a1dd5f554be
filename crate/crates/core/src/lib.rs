//! Simulation core for a RIS-assisted multi-user MIMO downlink.
//!
//! - [`numerics`]: complex matrices, Hermitian solves, seeded random streams
//! - [`channel`]: BS→RIS Rician and RIS→user Rayleigh channels with path loss
//!   and AR(1) time evolution
//! - [`link`]: effective channel, SINR, rates and constraint projections
//! - [`env`]: the per-timestep MDP wrapped around channel and link
//! - [`baselines`]: zero-forcing with random or optimized RIS phases

pub mod baselines;
pub mod channel;
pub mod env;
pub mod link;
pub mod numerics;

pub use channel::{ChannelModel, ChannelState, PathlossMode, SystemConfig};
pub use env::{ActionVector, Env, Observation, Task, Transition};
pub use link::{Beamformer, LinkReport, PhaseShift};
pub use numerics::{CMatrix, Rng};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("matrix is singular or not positive definite")]
    Singular,
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("episode finished; call reset before stepping")]
    EpisodeDone,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
