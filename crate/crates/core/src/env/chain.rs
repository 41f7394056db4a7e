//! Tabular chain MDP used as an end-to-end fixture.
//!
//! States `0..n`, start at 0, the last state is absorbing. The agent acts with
//! a 1-D continuous action whose sign picks the direction; with probability
//! `slip` the direction is flipped. Observations are one-hot state vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, Environment, Step};
use crate::tasks::{Predicate, RewardVector, TaskSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub n_states: usize,
    pub slip: f64,
    pub episode_length: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { n_states: 5, slip: 0.0, episode_length: 10 }
    }
}

impl ChainConfig {
    pub fn midpoint(&self) -> usize {
        self.n_states / 2
    }

    pub fn terminal(&self) -> usize {
        self.n_states - 1
    }

    /// `CHAIN_AT(mid)` as the auxiliary task and `CHAIN_AT(last)` as the main task.
    pub fn default_tasks(&self) -> TaskSet {
        TaskSet::new(vec![Predicate::ChainAt(self.midpoint())], vec![Predicate::ChainAt(self.terminal())])
            .expect("one external task")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainAction {
    Left,
    Right,
}

impl ChainAction {
    pub fn from_continuous(a: f64) -> Self {
        if a > 0.0 {
            ChainAction::Right
        } else {
            ChainAction::Left
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainTransition {
    pub next_state: usize,
    /// `[midpoint reward, terminal reward]`.
    pub rewards: [f64; 2],
}

/// One transition of the chain.
pub fn chain_mdp_step<R: Rng + ?Sized>(
    config: &ChainConfig,
    state: usize,
    action: ChainAction,
    rng: &mut R,
) -> ChainTransition {
    let last = config.terminal();
    let next_state = if state == last {
        last
    } else {
        let slipped = config.slip > 0.0 && rng.random::<f64>() < config.slip;
        let right = (action == ChainAction::Right) != slipped;
        if right {
            (state + 1).min(last)
        } else {
            state.saturating_sub(1)
        }
    };
    let hit = |k: usize| if next_state == k { 1.0 } else { 0.0 };
    ChainTransition { next_state, rewards: [hit(config.midpoint()), hit(last)] }
}

/// Highest probability of reaching the last state within the horizon, by
/// finite-horizon value iteration over `(t, state)`.
pub fn optimal_success_probability(config: &ChainConfig) -> f64 {
    let n = config.n_states;
    let last = n - 1;
    let mut v: Vec<f64> = (0..n).map(|s| if s == last { 1.0 } else { 0.0 }).collect();
    for _ in 0..config.episode_length {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                if s == last {
                    return 1.0;
                }
                let (left, right) = (s.saturating_sub(1), (s + 1).min(last));
                let go = |intended: usize, other: usize| (1.0 - config.slip) * v[intended] + config.slip * v[other];
                go(right, left).max(go(left, right))
            })
            .collect();
        v = next;
    }
    v[0]
}

#[derive(Debug, Clone)]
pub struct ChainMdp {
    config: ChainConfig,
    state: usize,
    t: usize,
    started: bool,
    rng: ChaCha8Rng,
}

impl ChainMdp {
    pub fn new(config: ChainConfig) -> Result<Self, EnvError> {
        if config.n_states < 2 {
            return Err(EnvError::Config("chain needs at least 2 states".into()));
        }
        if config.episode_length == 0 {
            return Err(EnvError::Config("episode length must be positive".into()));
        }
        if !(0.0..=1.0).contains(&config.slip) {
            return Err(EnvError::Config("slip must lie in [0, 1]".into()));
        }
        Ok(Self { config, state: 0, t: 0, started: false, rng: ChaCha8Rng::seed_from_u64(0) })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn state(&self) -> usize {
        self.state
    }

    fn observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.config.n_states];
        obs[self.state] = 1.0;
        obs
    }
}

impl Environment for ChainMdp {
    fn observation_dim(&self) -> usize {
        self.config.n_states
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn episode_length(&self) -> usize {
        self.config.episode_length
    }

    fn supports(&self, predicate: &Predicate) -> bool {
        matches!(predicate, Predicate::ChainAt(k) if *k < self.config.n_states)
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = 0;
        self.t = 0;
        self.started = true;
        self.observe()
    }

    fn step(&mut self, action: &[f64], tasks: &TaskSet) -> Result<Step, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.t >= self.config.episode_length {
            return Err(EnvError::EpisodeDone);
        }
        if action.len() != 1 {
            return Err(EnvError::ActionDimension { expected: 1, got: action.len() });
        }
        let tr = chain_mdp_step(&self.config, self.state, ChainAction::from_continuous(action[0]), &mut self.rng);
        self.state = tr.next_state;
        self.t += 1;
        let rewards = tasks
            .tasks()
            .iter()
            .map(|t| match t.predicate {
                Predicate::ChainAt(k) => Ok(if self.state == k { 1.0 } else { 0.0 }),
                _ => Err(crate::tasks::TaskError::Unsupported(t.name.clone())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Step {
            observation: self.observe(),
            rewards: RewardVector(rewards),
            done: self.t == self.config.episode_length,
        })
    }
}
