//! Desk-scale actor/learner/parameter-server runtime.
//!
//! Actors run episodes with the latest published policy and push
//! trajectories into a shared replay buffer; learners compute gradients from
//! replay; the parameter server averages `G` gradients per network, applies
//! Adam and publishes a new parameter version. [`run_training`] drives either
//! a deterministic single-process round robin or a threaded deployment.

pub mod actor;
pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod replay;
pub mod server;
pub mod training;

use sacx_core::env::EnvError;
use sacx_core::learner::LearnerError;
use sacx_core::nn::{NetError, ParamError};
use sacx_core::scheduler::SchedulerError;
use sacx_core::tasks::TaskError;
use thiserror::Error;

pub use actor::{actor_episode, evaluate_episode, ActorEpisode, Segment};
pub use checkpoint::Checkpoint;
pub use config::{EvalConfig, NetworkConfig, OutputConfig, RunConfig, RuntimeConfig, TaskConfig};
pub use metrics::{MetricRecord, MetricsSink};
pub use replay::{ReplayBuffer, ReplayError};
pub use server::{parameter_server_step, GradientMessage, ParameterServer};
pub use training::{run_scripted_distributed, run_training, run_training_with, Control, EvalPoint, RunReport};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config serialization error: {0}")]
    TomlWrite(#[from] toml::ser::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("worker failed: {0}")]
    Worker(String),
}

/// Independent seed for a worker stream (splitmix64 over the inputs).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut x = base;
    for v in [stream, index] {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(v.wrapping_mul(0xD1B5_4A32_D192_ED03));
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}
