//! Fixed-length episodic environments that emit a reward for every task.

pub mod chain;
pub mod tabletop;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rewards::RewardError;
use crate::tasks::{Predicate, RewardVector, TaskError, TaskSet};

pub use chain::{optimal_success_probability, ChainConfig, ChainMdp};
pub use tabletop::{ObjectSpec, Tabletop, TabletopConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called after the episode finished")]
    EpisodeDone,
    #[error("step called before reset")]
    NotReset,
    #[error("action has {got} entries, expected {expected}")]
    ActionDimension { expected: usize, got: usize },
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub rewards: RewardVector,
    pub done: bool,
}

/// Common episode/step contract.
pub trait Environment: Send {
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn episode_length(&self) -> usize;
    fn supports(&self, predicate: &Predicate) -> bool;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Executes one action and returns the next observation and the reward of
    /// every task in `tasks`, evaluated on the resulting state.
    fn step(&mut self, action: &[f64], tasks: &TaskSet) -> Result<Step, EnvError>;

    fn check_tasks(&self, tasks: &TaskSet) -> Result<(), EnvError> {
        for t in tasks.tasks() {
            if !self.supports(&t.predicate) {
                return Err(TaskError::Unsupported(t.name.clone()).into());
            }
        }
        Ok(())
    }
}

/// Environment selection as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Tabletop(TabletopConfig),
    Chain(ChainConfig),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Tabletop(TabletopConfig::default())
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Environment>, EnvError> {
        Ok(match self {
            EnvConfig::Tabletop(c) => Box::new(Tabletop::new(c.clone())?),
            EnvConfig::Chain(c) => Box::new(ChainMdp::new(c.clone())?),
        })
    }

    pub fn episode_length(&self) -> usize {
        match self {
            EnvConfig::Tabletop(c) => c.episode_length,
            EnvConfig::Chain(c) => c.episode_length,
        }
    }
}
