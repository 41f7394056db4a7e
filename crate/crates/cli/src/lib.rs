//! Experiment harness: canned run definitions, seed aggregation and curve
//! emission on top of `sacx-runtime`.

pub mod experiment;
pub mod presets;

use thiserror::Error;

pub use experiment::{
    compare_modes, emit_reward_matrix, episodes_to_threshold, moving_average, nearest_rank, run_experiment, Band,
    ExperimentResult, ExperimentSpec, ModeSummary, ModesReport, RunCurve,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Runtime(#[from] sacx_runtime::RuntimeError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("toml: {0}")]
    TomlWrite(#[from] toml::ser::Error),
}
