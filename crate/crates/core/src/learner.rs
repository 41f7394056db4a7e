//! Critic regression onto Retrace targets and reparameterized policy
//! improvement for every intention.
//!
//! All tasks are trained from the same replayed windows, whatever intention
//! generated them. Losses are averaged over tasks and batch rows, and both
//! gradients are for losses to be minimized: the policy loss per state is
//! `-Q(s, a) + c * log pi(a|s)` with `a = mean + std * eps`, where
//! `c = alpha` for an entropy bonus and `c = -alpha` for the literal
//! maximization of `Q + alpha * log pi`.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::policy::std_tanh_derivative;
use crate::nn::{AdamConfig, Critic, GaussianPolicy, HeadGroup, NetError, ParamError, ParamVector};
use crate::retrace::{retrace_targets, truncated_is_weights_log, RetraceError};
use crate::trajectory::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Retrace(#[from] RetraceError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("invalid learner config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EntropySign {
    /// Minimize `-Q + alpha * log pi` (entropy bonus).
    #[default]
    Bonus,
    /// Maximize `Q + alpha * log pi` as written, which penalizes entropy.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub entropy_sign: EntropySign,
    /// Samples for `E_pi'[Q'(s, .)]`.
    pub n_exp: usize,
    /// Windows per learner step.
    pub batch_size: usize,
    /// Steps per window.
    pub window: usize,
    pub target_period: u64,
    pub policy_adam: AdamConfig,
    pub critic_adam: AdamConfig,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 1e-3,
            entropy_sign: EntropySign::Bonus,
            n_exp: 10,
            batch_size: 16,
            window: 10,
            target_period: 1000,
            policy_adam: AdamConfig::default(),
            critic_adam: AdamConfig::default(),
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: &str| Err(LearnerError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be non-negative");
        }
        if self.n_exp == 0 || self.batch_size == 0 || self.window == 0 || self.target_period == 0 {
            return bad("n_exp, batch_size, window and target_period must be positive");
        }
        if self.policy_adam.lr <= 0.0 || self.critic_adam.lr <= 0.0 {
            return bad("learning rates must be positive");
        }
        Ok(())
    }

    fn entropy_coefficient(&self) -> f64 {
        match self.entropy_sign {
            EntropySign::Bonus => self.alpha,
            EntropySign::Literal => -self.alpha,
        }
    }
}

/// Policy and critic architectures shared by actors and learners.
#[derive(Debug, Clone)]
pub struct Models {
    pub policy: GaussianPolicy,
    pub critic: Critic,
    pub tasks: usize,
}

impl Models {
    pub fn obs_dim(&self) -> usize {
        self.policy.obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.policy.action_dim()
    }
}

/// A contiguous slice `start..start + len` of a replayed trajectory.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub trajectory: &'a Trajectory,
    pub start: usize,
    pub len: usize,
}

impl Window<'_> {
    /// Whether the value after the window is zero (episode ended).
    pub fn ends_episode(&self) -> bool {
        self.trajectory.terminal && self.start + self.len == self.trajectory.len()
    }
}

/// Uniform trajectory, uniform start; windows are clipped at the episode end.
pub fn sample_windows<'a, R: Rng + ?Sized>(
    trajectories: &[&'a Trajectory],
    count: usize,
    len: usize,
    rng: &mut R,
) -> Vec<Window<'a>> {
    let usable: Vec<&Trajectory> = trajectories.iter().copied().filter(|t| !t.is_empty()).collect();
    if usable.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let trajectory = usable[rng.random_range(0..usable.len())];
            let start = rng.random_range(0..trajectory.len());
            Window { trajectory, start, len: len.min(trajectory.len() - start) }
        })
        .collect()
}

fn stack_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, cols: usize) -> Array2<f64> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        debug_assert_eq!(r.len(), cols);
        data.extend_from_slice(r);
        n += 1;
    }
    Array2::from_shape_vec((n, cols), data).expect("rows have equal length")
}

fn task_groups(tasks: usize, rows: usize, stacked: bool) -> Vec<HeadGroup> {
    (0..tasks)
        .map(|k| if stacked { HeadGroup::new(k, k * rows..(k + 1) * rows) } else { HeadGroup::new(k, 0..rows) })
        .collect()
}

fn gaussian_log_density(mean: &[f64], std: &[f64], a: &[f64]) -> f64 {
    crate::nn::log_density(&crate::nn::GaussianPolicyOutput { mean: mean.to_vec(), std: std.to_vec() }, a)
}

/// Regression inputs `(s_j, a_j)` and fixed Retrace targets per task.
#[derive(Debug, Clone, PartialEq)]
pub struct RetraceBatch {
    /// `N x (obs + action)`.
    pub inputs: Array2<f64>,
    /// `tasks x N`.
    pub targets: Array2<f64>,
    /// Observations of the same `N` steps, reused for the policy update.
    pub states: Array2<f64>,
    /// Steps per behavior task in the batch.
    pub behavior_counts: Vec<usize>,
}

/// Computes Retrace targets for all tasks with target networks.
pub fn compute_retrace_batch<R: Rng + ?Sized>(
    models: &Models,
    target_policy: &ParamVector,
    target_critic: &ParamVector,
    windows: &[Window<'_>],
    config: &LearnerConfig,
    rng: &mut R,
) -> Result<RetraceBatch, LearnerError> {
    let k_tasks = models.tasks;
    let obs_dim = models.obs_dim();
    let act_dim = models.action_dim();
    if windows.is_empty() || windows.iter().any(|w| w.len == 0) {
        return Err(RetraceError::EmptyTrajectory.into());
    }
    let n: usize = windows.iter().map(|w| w.len).sum();

    let mut states = Vec::with_capacity(n);
    let mut next_states = Vec::with_capacity(n);
    let mut inputs = Array2::zeros((n, obs_dim + act_dim));
    let mut log_b = Vec::with_capacity(n);
    let mut behavior_counts = vec![0; k_tasks];
    let mut row = 0;
    for w in windows {
        for t in w.start..w.start + w.len {
            let step = &w.trajectory.steps[t];
            states.push(step.observation.as_slice());
            next_states.push(w.trajectory.observation(t + 1));
            inputs.slice_mut(s![row, ..obs_dim]).assign(&ndarray::ArrayView1::from(&step.observation[..]));
            inputs.slice_mut(s![row, obs_dim..]).assign(&ndarray::ArrayView1::from(&step.action[..]));
            log_b.push(step.behavior_log_density);
            if step.behavior_task < k_tasks {
                behavior_counts[step.behavior_task] += 1;
            }
            row += 1;
        }
    }
    let state_mat = stack_rows(states.iter().copied(), obs_dim);
    let next_mat = stack_rows(next_states.iter().copied(), obs_dim);

    // pi'(a_j | s_j) for every task.
    let pol = models.policy.net().forward(target_policy, state_mat.view(), &task_groups(k_tasks, n, false), false)?;
    // pi'(.|s_{j+1}) for the expectation.
    let pol_next =
        models.policy.net().forward(target_policy, next_mat.view(), &task_groups(k_tasks, n, false), false)?;

    let samples = config.n_exp;
    let mut exp_inputs = Array2::zeros((k_tasks * n * samples, obs_dim + act_dim));
    for k in 0..k_tasks {
        for j in 0..n {
            let raw = pol_next.output.row(k * n + j);
            let out = crate::nn::GaussianPolicyOutput::from_raw(raw.as_slice().expect("contiguous"));
            for e in 0..samples {
                let r = (k * n + j) * samples + e;
                exp_inputs.slice_mut(s![r, ..obs_dim]).assign(&next_mat.row(j));
                for d in 0..act_dim {
                    let eps: f64 = rng.sample(StandardNormal);
                    exp_inputs[[r, obs_dim + d]] = out.mean[d] + out.std[d] * eps;
                }
            }
        }
    }
    let q_next = models.critic.net().forward(
        target_critic,
        exp_inputs.view(),
        &task_groups(k_tasks, n * samples, true),
        false,
    )?;
    let q_logged = models.critic.net().forward(target_critic, inputs.view(), &task_groups(k_tasks, n, false), false)?;

    let mut targets = Array2::zeros((k_tasks, n));
    for k in 0..k_tasks {
        let mut offset = 0;
        for w in windows {
            let len = w.len;
            let mut q = Vec::with_capacity(len);
            let mut v = Vec::with_capacity(len);
            let mut r = Vec::with_capacity(len);
            let mut log_pi = Vec::with_capacity(len);
            for i in 0..len {
                let j = offset + i;
                let t = w.start + i;
                q.push(q_logged.output[[k * n + j, 0]]);
                let last_of_episode = w.trajectory.terminal && t + 1 == w.trajectory.len();
                v.push(if last_of_episode {
                    0.0
                } else {
                    let base = (k * n + j) * samples;
                    q_next.output.slice(s![base..base + samples, 0]).sum() / samples as f64
                });
                r.push(w.trajectory.steps[t].rewards[k]);
                let raw = pol.output.row(k * n + j);
                let raw = raw.as_slice().expect("contiguous");
                let out = crate::nn::GaussianPolicyOutput::from_raw(raw);
                log_pi.push(gaussian_log_density(&out.mean, &out.std, &w.trajectory.steps[t].action));
            }
            let c = truncated_is_weights_log(&log_pi, &log_b[offset..offset + len])?;
            let tgt = retrace_targets(&q, &v, &r, &c, config.gamma)?;
            for (i, value) in tgt.into_iter().enumerate() {
                targets[[k, offset + i]] = value;
            }
            offset += len;
        }
    }
    Ok(RetraceBatch { inputs, targets, states: state_mat, behavior_counts })
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub loss: f64,
    pub gradient: ParamVector,
    /// Mean `|Q - Q_ret|` per task.
    pub td_error: Vec<f64>,
}

/// `(1/K) sum_T mean_j (Q_T(s_j, a_j) - Q_ret_T(j))^2` and its gradient.
pub fn critic_loss_and_grad(
    critic: &Critic,
    params: &ParamVector,
    batch: &RetraceBatch,
) -> Result<CriticLoss, LearnerError> {
    let (k_tasks, n) = batch.targets.dim();
    let f = critic.net().forward(params, batch.inputs.view(), &task_groups(k_tasks, n, false), true)?;
    let scale = 1.0 / (k_tasks * n) as f64;
    let mut upstream = Array2::zeros((k_tasks * n, 1));
    let mut loss = 0.0;
    let mut td_error = vec![0.0; k_tasks];
    for k in 0..k_tasks {
        for j in 0..n {
            let diff = f.output[[k * n + j, 0]] - batch.targets[[k, j]];
            loss += diff * diff * scale;
            upstream[[k * n + j, 0]] = 2.0 * diff * scale;
            td_error[k] += diff.abs() / n as f64;
        }
    }
    let g = critic.net().backward(params, &f, upstream.view(), true, false)?;
    Ok(CriticLoss { loss, gradient: g.params.expect("requested"), td_error })
}

#[derive(Debug, Clone)]
pub struct PolicyLoss {
    pub loss: f64,
    pub gradient: ParamVector,
    /// Mean Gaussian entropy per task.
    pub entropy: Vec<f64>,
    /// Mean `Q(s, a)` at the sampled actions per task.
    pub q_value: Vec<f64>,
}

/// Action-value model as seen by the policy update: values and action
/// gradients for task-major rows (`k * N + j` pairs task `k` with state `j`).
pub trait ActionCritic {
    fn values_and_action_grads(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        tasks: usize,
    ) -> Result<(Vec<f64>, Array2<f64>), LearnerError>;
}

/// The learned critic with its parameters held fixed.
#[derive(Debug, Clone, Copy)]
pub struct NetCritic<'a> {
    pub critic: &'a Critic,
    pub params: &'a ParamVector,
}

impl ActionCritic for NetCritic<'_> {
    fn values_and_action_grads(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        tasks: usize,
    ) -> Result<(Vec<f64>, Array2<f64>), LearnerError> {
        let n = states.nrows();
        let obs_dim = states.ncols();
        let rows = actions.nrows();
        let mut input = Array2::zeros((rows, obs_dim + actions.ncols()));
        for r in 0..rows {
            input.slice_mut(s![r, ..obs_dim]).assign(&states.row(r % n));
            input.slice_mut(s![r, obs_dim..]).assign(&actions.row(r));
        }
        let net = self.critic.net();
        let f = net.forward(self.params, input.view(), &task_groups(tasks, n, true), true)?;
        let ones = Array2::ones((rows, 1));
        let dx = net.backward(self.params, &f, ones.view(), false, true)?.input.expect("requested");
        let q = f.output.column(0).to_vec();
        Ok((q, dx.slice(s![.., obs_dim..]).to_owned()))
    }
}

/// Reparameterized policy loss over `states` for every task.
///
/// `noise` holds one standard-normal action draw per `(task, state)` row,
/// laid out task-major: row `k * N + j`.
pub fn policy_loss_and_grad(
    policy: &GaussianPolicy,
    policy_params: &ParamVector,
    critic: &dyn ActionCritic,
    states: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    config: &LearnerConfig,
) -> Result<PolicyLoss, LearnerError> {
    let k_tasks = policy.net().spec().heads;
    let n = states.nrows();
    let act_dim = policy.action_dim();
    if noise.dim() != (k_tasks * n, act_dim) {
        return Err(NetError::Upstream { expected: (k_tasks * n, act_dim), got: noise.dim() }.into());
    }
    let pf = policy.net().forward(policy_params, states, &task_groups(k_tasks, n, false), true)?;

    let rows = k_tasks * n;
    let mut mean = Array2::zeros((rows, act_dim));
    let mut std = Array2::zeros((rows, act_dim));
    let mut actions = Array2::zeros((rows, act_dim));
    for r in 0..rows {
        let raw = pf.output.row(r);
        for d in 0..act_dim {
            let m = raw[d];
            let sd = crate::nn::variance_from_tanh(raw[act_dim + d]).sqrt();
            mean[[r, d]] = m;
            std[[r, d]] = sd;
            actions[[r, d]] = m + sd * noise[[r, d]];
        }
    }
    let (qs, dq) = critic.values_and_action_grads(states, actions.view(), k_tasks)?;

    let c = config.entropy_coefficient();
    let scale = 1.0 / rows as f64;
    let mut upstream = Array2::zeros((rows, 2 * act_dim));
    let mut loss = 0.0;
    let mut entropy = vec![0.0; k_tasks];
    let mut q_value = vec![0.0; k_tasks];
    let half_log_2pi_e = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    for r in 0..rows {
        let k = r / n;
        let q = qs[r];
        let mut log_pi = 0.0;
        for d in 0..act_dim {
            let (m, sd, e) = (mean[[r, d]], std[[r, d]], noise[[r, d]]);
            let a = m + sd * e;
            let z = (a - m) / sd;
            log_pi += -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
            entropy[k] += (half_log_2pi_e + sd.ln()) / n as f64;
            // Chain rule through a = m + sd * e with log pi also depending on m, sd directly.
            let g_a = -dq[[r, d]] - c * (a - m) / (sd * sd);
            let g_m = g_a + c * (a - m) / (sd * sd);
            let g_s = g_a * e + c * ((a - m) * (a - m) / (sd * sd * sd) - 1.0 / sd);
            upstream[[r, d]] = g_m * scale;
            upstream[[r, act_dim + d]] = g_s * std_tanh_derivative(sd) * scale;
        }
        q_value[k] += q / n as f64;
        loss += (-q + c * log_pi) * scale;
    }
    let g = policy.net().backward(policy_params, &pf, upstream.view(), true, false)?;
    Ok(PolicyLoss { loss, gradient: g.params.expect("requested"), entropy, q_value })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerMetrics {
    pub step: u64,
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub td_error: Vec<f64>,
    pub entropy: Vec<f64>,
    pub behavior_counts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LearnerOutput {
    pub policy_gradient: ParamVector,
    pub critic_gradient: ParamVector,
    pub metrics: LearnerMetrics,
}

/// Learner worker state: target networks, step counter and its own RNG.
#[derive(Debug, Clone)]
pub struct Learner {
    models: Models,
    config: LearnerConfig,
    target_policy: ParamVector,
    target_critic: ParamVector,
    steps: u64,
    syncs: u64,
    rng: ChaCha8Rng,
}

impl Learner {
    pub fn new(
        models: Models,
        config: LearnerConfig,
        policy: &ParamVector,
        critic: &ParamVector,
        seed: u64,
    ) -> Result<Self, LearnerError> {
        config.validate()?;
        Ok(Self {
            models,
            config,
            target_policy: policy.clone(),
            target_critic: critic.clone(),
            steps: 0,
            syncs: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn syncs(&self) -> u64 {
        self.syncs
    }

    pub fn target_policy(&self) -> &ParamVector {
        &self.target_policy
    }

    pub fn target_critic(&self) -> &ParamVector {
        &self.target_critic
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    /// Hard copy of the online parameters into the target networks.
    pub fn target_sync(&mut self, policy: &ParamVector, critic: &ParamVector) -> Result<(), LearnerError> {
        self.target_policy.copy_from(policy)?;
        self.target_critic.copy_from(critic)?;
        self.syncs += 1;
        Ok(())
    }

    /// One gradient computation against the given online parameters.
    /// Returns `None` without side effects when replay is empty.
    pub fn learner_step(
        &mut self,
        replay: &[&Trajectory],
        policy: &ParamVector,
        critic: &ParamVector,
    ) -> Result<Option<LearnerOutput>, LearnerError> {
        let windows = sample_windows(replay, self.config.batch_size, self.config.window, &mut self.rng);
        if windows.is_empty() {
            return Ok(None);
        }
        let batch = compute_retrace_batch(
            &self.models,
            &self.target_policy,
            &self.target_critic,
            &windows,
            &self.config,
            &mut self.rng,
        )?;
        let c = critic_loss_and_grad(&self.models.critic, critic, &batch)?;
        let rows = self.models.tasks * batch.states.nrows();
        let act_dim = self.models.action_dim();
        let noise = Array2::from_shape_simple_fn((rows, act_dim), || self.rng.sample(StandardNormal));
        let q = NetCritic { critic: &self.models.critic, params: critic };
        let p = policy_loss_and_grad(&self.models.policy, policy, &q, batch.states.view(), noise.view(), &self.config)?;
        self.steps += 1;
        if self.steps % self.config.target_period == 0 {
            self.target_sync(policy, critic)?;
        }
        Ok(Some(LearnerOutput {
            policy_gradient: p.gradient,
            critic_gradient: c.gradient,
            metrics: LearnerMetrics {
                step: self.steps,
                critic_loss: c.loss,
                policy_loss: p.loss,
                td_error: c.td_error,
                entropy: p.entropy,
                behavior_counts: batch.behavior_counts,
            },
        }))
    }
}
