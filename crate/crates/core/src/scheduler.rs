//! Intention scheduling within an episode.
//!
//! Every `period` steps the scheduler picks the intention to execute. Learned
//! mode samples from a Boltzmann distribution over Monte Carlo estimates of
//! the main-task return that followed each choice, keyed by the choices made
//! earlier in the episode. With several external tasks one table is kept per
//! external task and the active one is drawn uniformly per episode.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("trajectory has no reward channel {0}")]
    MissingReward(usize),
    #[error("episode length {len} is not {switches} switches of {period} steps")]
    Period { len: usize, period: usize, switches: usize },
    #[error("invalid schedule config: {0}")]
    Config(String),
    #[error("no candidates to choose from")]
    NoCandidates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Uniform,
    #[default]
    Learned,
    MainOnly,
}

impl std::fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScheduleMode::Uniform => "uniform",
            ScheduleMode::Learned => "learned",
            ScheduleMode::MainOnly => "main_only",
        })
    }
}

impl std::str::FromStr for ScheduleMode {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(ScheduleMode::Uniform),
            "learned" => Ok(ScheduleMode::Learned),
            "main_only" => Ok(ScheduleMode::MainOnly),
            other => Err(SchedulerError::Config(format!("unknown schedule mode {other:?}"))),
        }
    }
}

/// How a table entry turns pushed returns into an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QRule {
    /// Mean of the last `window` returns.
    #[default]
    Window,
    /// `q += (R - q) / window`.
    Incremental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub mode: ScheduleMode,
    /// Steps per intention.
    pub period: usize,
    pub switches: usize,
    pub temperature: f64,
    /// Linear decay target reached after `decay_episodes`; `None` keeps the
    /// temperature fixed.
    pub final_temperature: Option<f64>,
    pub decay_episodes: u64,
    pub window: usize,
    pub q_rule: QRule,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            mode: ScheduleMode::Learned,
            period: 100,
            switches: 2,
            temperature: 1.0,
            final_temperature: None,
            decay_episodes: 10_000,
            window: 50,
            q_rule: QRule::Window,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self, episode_length: usize) -> Result<(), SchedulerError> {
        if self.period == 0 || self.period * self.switches != episode_length {
            return Err(SchedulerError::Period { len: episode_length, period: self.period, switches: self.switches });
        }
        if self.window == 0 {
            return Err(SchedulerError::Config("window must be at least 1".into()));
        }
        check_temperature(self.temperature)?;
        if let Some(t) = self.final_temperature {
            check_temperature(t)?;
        }
        Ok(())
    }

    pub fn temperature_at(&self, episode: u64) -> f64 {
        match self.final_temperature {
            None => self.temperature,
            Some(end) => {
                if self.decay_episodes == 0 || episode >= self.decay_episodes {
                    return end;
                }
                let f = episode as f64 / self.decay_episodes as f64;
                self.temperature + (end - self.temperature) * f
            }
        }
    }
}

fn check_temperature(eta: f64) -> Result<(), SchedulerError> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(SchedulerError::Temperature(eta))
    }
}

/// Chosen intentions of one episode and the main-task return after each choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTrace {
    pub main_task: usize,
    pub tasks: Vec<usize>,
    pub returns: Vec<f64>,
}

/// For each switch point `h`, `sum_{t >= h * period} gamma^t r_t` with `t`
/// counted from the episode start.
pub fn schedule_return_from_rewards(rewards: &[f64], period: usize, gamma: f64) -> Vec<f64> {
    let switches = rewards.len().div_ceil(period.max(1));
    let mut out = vec![0.0; switches];
    let mut suffix = 0.0;
    for t in (0..rewards.len()).rev() {
        suffix += gamma.powi(t as i32) * rewards[t];
        if t % period == 0 {
            out[t / period] = suffix;
        }
    }
    out
}

pub fn schedule_return(
    trajectory: &Trajectory,
    main_task: usize,
    period: usize,
    gamma: f64,
) -> Result<Vec<f64>, SchedulerError> {
    if trajectory.steps.iter().any(|s| s.rewards.len() <= main_task) {
        return Err(SchedulerError::MissingReward(main_task));
    }
    Ok(schedule_return_from_rewards(&trajectory.task_rewards(main_task), period, gamma))
}

/// `P(i) ∝ exp(q_i / eta)`.
pub fn boltzmann_probs(q: &[f64], eta: f64) -> Result<Vec<f64>, SchedulerError> {
    check_temperature(eta)?;
    if q.is_empty() {
        return Err(SchedulerError::NoCandidates);
    }
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = q.iter().map(|v| ((v - max) / eta).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Index drawn from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub buffer: VecDeque<f64>,
    pub mean: f64,
    /// Total returns ever pushed.
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntrySummary {
    pub mean: f64,
    pub count: u64,
}

/// Monte Carlo estimates keyed by (earlier choices, candidate).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SchedulerTable {
    window: usize,
    rule: QRule,
    entries: BTreeMap<(Vec<usize>, usize), TableEntry>,
    max_observed: Option<f64>,
}

impl SchedulerTable {
    pub fn new(window: usize, rule: QRule) -> Self {
        Self { window: window.max(1), rule, entries: BTreeMap::new(), max_observed: None }
    }

    pub fn entry(&self, prefix: &[usize], candidate: usize) -> Option<&TableEntry> {
        self.entries.get(&(prefix.to_vec(), candidate))
    }

    /// Estimate for a key; unvisited keys get the largest return seen so far
    /// (zero before any update) so every choice is tried.
    pub fn q(&self, prefix: &[usize], candidate: usize) -> f64 {
        match self.entry(prefix, candidate) {
            Some(e) => e.mean,
            None => self.max_observed.unwrap_or(0.0),
        }
    }

    pub fn q_values(&self, prefix: &[usize], candidates: usize) -> Vec<f64> {
        (0..candidates).map(|c| self.q(prefix, c)).collect()
    }

    pub fn push(&mut self, prefix: &[usize], candidate: usize, value: f64) {
        let window = self.window;
        let rule = self.rule;
        let e = self.entries.entry((prefix.to_vec(), candidate)).or_insert_with(|| TableEntry {
            buffer: VecDeque::with_capacity(window),
            mean: 0.0,
            count: 0,
        });
        if e.buffer.len() == window {
            e.buffer.pop_front();
        }
        e.buffer.push_back(value);
        e.count += 1;
        e.mean = match rule {
            QRule::Window => e.buffer.iter().sum::<f64>() / e.buffer.len() as f64,
            QRule::Incremental => e.mean + (value - e.mean) / window as f64,
        };
        self.max_observed = Some(self.max_observed.map_or(value, |m| m.max(value)));
    }

    /// Pushes the return after each choice of a finished episode.
    pub fn update_mc_q(&mut self, trace: &ScheduleTrace) {
        for (h, (&task, &ret)) in trace.tasks.iter().zip(&trace.returns).enumerate() {
            self.push(&trace.tasks[..h], task, ret);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `prefix -> candidate -> {mean, count}` with task names.
    pub fn snapshot(&self, names: &[String]) -> BTreeMap<String, BTreeMap<String, EntrySummary>> {
        let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
        let mut out: BTreeMap<String, BTreeMap<String, EntrySummary>> = BTreeMap::new();
        for ((prefix, cand), e) in &self.entries {
            let key = prefix.iter().map(|i| name(*i)).collect::<Vec<_>>().join(" > ");
            out.entry(key).or_default().insert(name(*cand), EntrySummary { mean: e.mean, count: e.count });
        }
        out
    }
}

/// Actor-local scheduler with one table per external task.
#[derive(Debug, Clone, PartialEq)]
pub struct Scheduler {
    config: ScheduleConfig,
    n_tasks: usize,
    externals: Vec<usize>,
    tables: Vec<SchedulerTable>,
}

impl Scheduler {
    pub fn new(config: ScheduleConfig, n_tasks: usize, externals: Vec<usize>) -> Result<Self, SchedulerError> {
        if n_tasks == 0 || externals.is_empty() || externals.iter().any(|e| *e >= n_tasks) {
            return Err(SchedulerError::NoCandidates);
        }
        let tables = externals.iter().map(|_| SchedulerTable::new(config.window, config.q_rule)).collect();
        Ok(Self { config, n_tasks, externals, tables })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn externals(&self) -> &[usize] {
        &self.externals
    }

    pub fn table(&self, external: usize) -> Option<&SchedulerTable> {
        self.externals.iter().position(|e| *e == external).map(|i| &self.tables[i])
    }

    /// Main task for the coming episode, uniform over external tasks.
    pub fn begin_episode<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.externals.len() == 1 {
            self.externals[0]
        } else {
            self.externals[rng.random_range(0..self.externals.len())]
        }
    }

    pub fn probabilities(&self, prefix: &[usize], main_task: usize, episode: u64) -> Result<Vec<f64>, SchedulerError> {
        match self.config.mode {
            ScheduleMode::Uniform => Ok(vec![1.0 / self.n_tasks as f64; self.n_tasks]),
            ScheduleMode::MainOnly => Ok((0..self.n_tasks).map(|t| if t == main_task { 1.0 } else { 0.0 }).collect()),
            ScheduleMode::Learned => {
                let table = self.table(main_task).ok_or(SchedulerError::NoCandidates)?;
                boltzmann_probs(&table.q_values(prefix, self.n_tasks), self.config.temperature_at(episode))
            }
        }
    }

    pub fn choose_task<R: Rng + ?Sized>(
        &self,
        prefix: &[usize],
        main_task: usize,
        episode: u64,
        rng: &mut R,
    ) -> Result<usize, SchedulerError> {
        match self.config.mode {
            ScheduleMode::MainOnly => Ok(main_task),
            ScheduleMode::Uniform => Ok(rng.random_range(0..self.n_tasks)),
            ScheduleMode::Learned => Ok(sample_index(&self.probabilities(prefix, main_task, episode)?, rng)),
        }
    }

    pub fn update(&mut self, trace: &ScheduleTrace) {
        if let Some(i) = self.externals.iter().position(|e| *e == trace.main_task) {
            self.tables[i].update_mc_q(trace);
        }
    }
}
