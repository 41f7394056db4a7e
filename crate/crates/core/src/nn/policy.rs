//! Gaussian intention policies and per-task critics on top of [`MultiHeadMlp`].
//!
//! Each task owns one head. A policy head emits `2 * action_dim` tanh units:
//! the first half is the mean, the second half maps to the variance through
//! `var = 0.3 + 0.35 * (t + 1)`, so variances stay in `[0.3, 1.0]`.

use std::f64::consts::PI;

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{HeadGroup, MultiHeadMlp, NetError, NetworkSpec, OutputActivation};
use super::params::ParamVector;

pub const MIN_VARIANCE: f64 = 0.3;
pub const MAX_VARIANCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetWidths {
    pub trunk: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub layer_norm: bool,
}

impl NetWidths {
    pub fn policy_default() -> Self {
        Self { trunk: vec![64, 64], head_hidden: vec![32], layer_norm: true }
    }

    pub fn critic_default() -> Self {
        Self { trunk: vec![128, 128], head_hidden: vec![64], layer_norm: true }
    }
}

impl Default for NetWidths {
    fn default() -> Self {
        Self::policy_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicyOutput {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianPolicyOutput {
    /// Splits one row of tanh outputs into mean and standard deviation.
    pub fn from_raw(raw: &[f64]) -> Self {
        let a = raw.len() / 2;
        let mean = raw[..a].to_vec();
        let std = raw[a..].iter().map(|t| variance_from_tanh(*t).sqrt()).collect();
        Self { mean, std }
    }

    pub fn action_dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn variance_from_tanh(t: f64) -> f64 {
    MIN_VARIANCE + 0.5 * (MAX_VARIANCE - MIN_VARIANCE) * (t + 1.0)
}

/// d std / d t for the variance mapping, given the std itself.
pub fn std_tanh_derivative(std: f64) -> f64 {
    0.5 * (MAX_VARIANCE - MIN_VARIANCE) / (2.0 * std)
}

/// `a = mean + std * noise`.
pub fn sample_reparam(output: &GaussianPolicyOutput, noise: &[f64]) -> Result<Vec<f64>, NetError> {
    if noise.len() != output.action_dim() {
        return Err(NetError::InputDimension { expected: output.action_dim(), got: noise.len() });
    }
    Ok(output.mean.iter().zip(&output.std).zip(noise).map(|((m, s), e)| m + s * e).collect())
}

/// Diagonal Gaussian log density.
pub fn log_density(output: &GaussianPolicyOutput, action: &[f64]) -> f64 {
    output
        .mean
        .iter()
        .zip(&output.std)
        .zip(action)
        .map(|((m, s), a)| {
            let z = (a - m) / s;
            -0.5 * z * z - s.ln() - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    net: MultiHeadMlp,
    action_dim: usize,
}

impl GaussianPolicy {
    pub fn new(obs_dim: usize, action_dim: usize, tasks: usize, widths: &NetWidths) -> Result<Self, NetError> {
        let net = MultiHeadMlp::new(NetworkSpec {
            input_dim: obs_dim,
            trunk: widths.trunk.clone(),
            head_hidden: widths.head_hidden.clone(),
            output_dim: 2 * action_dim,
            heads: tasks,
            output: OutputActivation::Tanh,
            layer_norm: widths.layer_norm,
        })?;
        Ok(Self { net, action_dim })
    }

    pub fn net(&self) -> &MultiHeadMlp {
        &self.net
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.net.spec().input_dim
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        self.net.init_params(rng)
    }

    pub fn policy_forward(
        &self,
        params: &ParamVector,
        obs: &[f64],
        task: usize,
    ) -> Result<GaussianPolicyOutput, NetError> {
        Ok(GaussianPolicyOutput::from_raw(&self.net.forward_one(params, obs, task)?))
    }

    /// Batched outputs for `(head, row range)` groups, one entry per output row.
    pub fn forward_batch(
        &self,
        params: &ParamVector,
        obs: ArrayView2<f64>,
        groups: &[HeadGroup],
    ) -> Result<Vec<GaussianPolicyOutput>, NetError> {
        let f = self.net.forward(params, obs, groups, false)?;
        Ok(f.output.rows().into_iter().map(|r| GaussianPolicyOutput::from_raw(&r.to_vec())).collect())
    }
}

#[derive(Debug, Clone)]
pub struct Critic {
    net: MultiHeadMlp,
    obs_dim: usize,
    action_dim: usize,
}

impl Critic {
    pub fn new(obs_dim: usize, action_dim: usize, tasks: usize, widths: &NetWidths) -> Result<Self, NetError> {
        let net = MultiHeadMlp::new(NetworkSpec {
            input_dim: obs_dim + action_dim,
            trunk: widths.trunk.clone(),
            head_hidden: widths.head_hidden.clone(),
            output_dim: 1,
            heads: tasks,
            output: OutputActivation::Linear,
            layer_norm: widths.layer_norm,
        })?;
        Ok(Self { net, obs_dim, action_dim })
    }

    pub fn net(&self) -> &MultiHeadMlp {
        &self.net
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        self.net.init_params(rng)
    }

    pub fn critic_forward(
        &self,
        params: &ParamVector,
        obs: &[f64],
        action: &[f64],
        task: usize,
    ) -> Result<f64, NetError> {
        if obs.len() != self.obs_dim {
            return Err(NetError::InputDimension { expected: self.obs_dim, got: obs.len() });
        }
        if action.len() != self.action_dim {
            return Err(NetError::InputDimension { expected: self.action_dim, got: action.len() });
        }
        let x: Vec<f64> = obs.iter().chain(action).copied().collect();
        Ok(self.net.forward_one(params, &x, task)?[0])
    }
}
