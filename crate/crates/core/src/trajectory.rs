//! Logged episodes as stored in replay.

use serde::{Deserialize, Serialize};

/// One step `(s_t, a_t, r(s_t, a_t))` with its behavior provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    /// Reward of every task in the task set.
    pub rewards: Vec<f64>,
    pub behavior_task: usize,
    /// `log b(a_t | s_t, behavior_task)` under the parameters that acted.
    pub behavior_log_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
    /// Observation after the last step.
    pub final_observation: Vec<f64>,
    /// Whether the last step ended the episode (no bootstrap beyond it).
    pub terminal: bool,
    pub actor: usize,
    pub episode: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Observation at time `t`, where `t == len()` gives the final observation.
    pub fn observation(&self, t: usize) -> &[f64] {
        if t == self.steps.len() {
            &self.final_observation
        } else {
            &self.steps[t].observation
        }
    }

    pub fn task_rewards(&self, task: usize) -> Vec<f64> {
        self.steps.iter().map(|s| s.rewards[task]).collect()
    }
}
