//! Run configuration, read from TOML.
//!
//! Every section and field has a default, so an empty file is a valid
//! configuration: the two-block stacking task on the tabletop with the 13
//! general auxiliary tasks and learned scheduling.

use std::path::Path;

use sacx_core::env::{ChainConfig, EnvConfig, Environment};
use sacx_core::learner::{LearnerConfig, Models};
use sacx_core::nn::{AdamConfig, Critic, GaussianPolicy, NetWidths};
use sacx_core::scheduler::ScheduleConfig;
use sacx_core::tasks::{standard_auxiliary_names, TaskSet};
use serde::{Deserialize, Serialize};

use crate::RuntimeError;

/// Task names as written in configs, e.g. `ABOVE(1,2)` or `STACK(1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub auxiliary: Vec<String>,
    pub external: Vec<String>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self { auxiliary: standard_auxiliary_names(), external: vec!["STACK(1)".into()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub policy: NetWidths,
    pub critic: NetWidths,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { policy: NetWidths::policy_default(), critic: NetWidths::critic_default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeConfig {
    pub actors: usize,
    pub learners: usize,
    /// Gradients averaged per parameter update (`G`).
    pub gradients_to_average: usize,
    /// Replay capacity in trajectories.
    pub replay_capacity: usize,
    /// Episodes each actor produces before the run stops.
    pub episodes_per_actor: u64,
    /// Optional cap on published parameter updates.
    pub max_updates: Option<u64>,
    pub single_process: bool,
    pub seed: u64,
    /// Parameter updates after each actor episode in single-process mode.
    pub updates_per_episode: usize,
    /// Trajectories required in replay before learners start.
    pub min_replay: usize,
    /// Bound of the trajectory and gradient queues in threaded mode.
    pub queue_capacity: usize,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            actors: 4,
            learners: 4,
            gradients_to_average: 4,
            replay_capacity: 2000,
            episodes_per_actor: 1000,
            max_updates: None,
            single_process: false,
            seed: 0,
            updates_per_episode: 1,
            min_replay: 1,
            queue_capacity: 16,
        }
    }
}

/// Evaluation episodes run the external task's intention alone and are never
/// added to replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Evaluate after every this many training episodes; 0 disables.
    pub every: u64,
    pub episodes: usize,
    /// Act with the policy mean instead of sampling.
    pub deterministic: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { every: 10, episodes: 1, deterministic: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    /// Learner metrics are recorded for every this many updates; 0 disables.
    pub learner_metrics_every: u64,
    /// Checkpoint after every this many training episodes; the final
    /// parameters are always written. 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub dump_trajectories: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { learner_metrics_every: 1, checkpoint_every: 0, dump_trajectories: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub tasks: TaskConfig,
    pub networks: NetworkConfig,
    pub learner: LearnerConfig,
    pub scheduler: ScheduleConfig,
    pub runtime: RuntimeConfig,
    pub evaluation: EvalConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, RuntimeError> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, RuntimeError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String, RuntimeError> {
        Ok(toml::to_string(self)?)
    }

    pub fn task_set(&self) -> Result<TaskSet, RuntimeError> {
        Ok(TaskSet::parse(&self.tasks.auxiliary, &self.tasks.external)?)
    }

    pub fn build_env(&self) -> Result<Box<dyn Environment>, RuntimeError> {
        Ok(self.env.build()?)
    }

    pub fn models(&self, env: &dyn Environment, tasks: &TaskSet) -> Result<Models, RuntimeError> {
        let (obs, act, k) = (env.observation_dim(), env.action_dim(), tasks.len());
        Ok(Models {
            policy: GaussianPolicy::new(obs, act, k, &self.networks.policy)?,
            critic: Critic::new(obs, act, k, &self.networks.critic)?,
            tasks: k,
        })
    }

    /// Small single-process run on the 5-state chain with the midpoint as the
    /// auxiliary task.
    pub fn chain_fixture() -> Self {
        let chain = ChainConfig { slip: 0.1, ..ChainConfig::default() };
        let small = NetWidths { trunk: vec![32], head_hidden: vec![16], layer_norm: true };
        let adam = AdamConfig { lr: 1e-3, ..AdamConfig::default() };
        Self {
            tasks: TaskConfig {
                auxiliary: vec![format!("CHAIN_AT({})", chain.midpoint())],
                external: vec![format!("CHAIN_AT({})", chain.terminal())],
            },
            scheduler: ScheduleConfig { period: chain.episode_length / 2, ..ScheduleConfig::default() },
            env: EnvConfig::Chain(chain),
            networks: NetworkConfig { policy: small.clone(), critic: small },
            learner: LearnerConfig {
                n_exp: 4,
                batch_size: 8,
                window: 5,
                target_period: 50,
                policy_adam: adam,
                critic_adam: adam,
                ..LearnerConfig::default()
            },
            runtime: RuntimeConfig {
                actors: 1,
                learners: 1,
                gradients_to_average: 1,
                single_process: true,
                episodes_per_actor: 500,
                updates_per_episode: 4,
                ..RuntimeConfig::default()
            },
            evaluation: EvalConfig { every: 25, episodes: 20, deterministic: true },
            output: OutputConfig::default(),
        }
    }

    /// Checks cross-section invariants and that the environment supports
    /// every configured task.
    pub fn validate(&self) -> Result<(), RuntimeError> {
        let rt = &self.runtime;
        let bad = |m: &str| Err(RuntimeError::Config(m.to_string()));
        if rt.actors == 0 || rt.learners == 0 || rt.gradients_to_average == 0 {
            return bad("actors, learners and gradients_to_average must be positive");
        }
        if !rt.single_process && rt.gradients_to_average > rt.learners {
            return bad("gradients_to_average cannot exceed the learner count");
        }
        if rt.replay_capacity == 0 || rt.queue_capacity == 0 {
            return bad("replay and queue capacities must be positive");
        }
        if self.evaluation.every > 0 && self.evaluation.episodes == 0 {
            return bad("evaluation needs at least one episode");
        }
        self.learner.validate()?;
        self.scheduler.validate(self.env.episode_length())?;
        let tasks = self.task_set()?;
        self.build_env()?.check_tasks(&tasks)?;
        Ok(())
    }
}
