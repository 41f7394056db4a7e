//! Gradient averaging and parameter publication.

use log::warn;
use sacx_core::nn::{adam_update, average, AdamConfig, AdamState, ParamError, ParamVector};

/// A learner's gradient pair for the policy and the critic.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMessage {
    pub learner: usize,
    /// Parameter version the gradient was computed against.
    pub version: u64,
    pub policy: ParamVector,
    pub critic: ParamVector,
}

/// Averages each network's gradients and applies one Adam step per network.
pub fn parameter_server_step(
    policy: &mut ParamVector,
    critic: &mut ParamVector,
    policy_state: &mut AdamState,
    critic_state: &mut AdamState,
    policy_adam: &AdamConfig,
    critic_adam: &AdamConfig,
    gradients: &[GradientMessage],
) -> Result<(), ParamError> {
    let gp = average(&gradients.iter().map(|g| &g.policy).collect::<Vec<_>>())?;
    let gc = average(&gradients.iter().map(|g| &g.critic).collect::<Vec<_>>())?;
    adam_update(policy, &gp, policy_state, policy_adam)?;
    adam_update(critic, &gc, critic_state, critic_adam)
}

/// Collects gradients until `G` are pending, then updates and bumps the
/// version. Gradients with a foreign layout are rejected and logged.
#[derive(Debug, Clone)]
pub struct ParameterServer {
    policy: ParamVector,
    critic: ParamVector,
    policy_state: AdamState,
    critic_state: AdamState,
    policy_adam: AdamConfig,
    critic_adam: AdamConfig,
    gradients_to_average: usize,
    pending: Vec<GradientMessage>,
    version: u64,
    rejected: u64,
}

impl ParameterServer {
    pub fn new(
        policy: ParamVector,
        critic: ParamVector,
        policy_adam: AdamConfig,
        critic_adam: AdamConfig,
        gradients_to_average: usize,
    ) -> Self {
        Self {
            policy_state: AdamState::new(policy.len()),
            critic_state: AdamState::new(critic.len()),
            policy,
            critic,
            policy_adam,
            critic_adam,
            gradients_to_average: gradients_to_average.max(1),
            pending: Vec::new(),
            version: 0,
            rejected: 0,
        }
    }

    pub fn policy(&self) -> &ParamVector {
        &self.policy
    }

    pub fn critic(&self) -> &ParamVector {
        &self.critic
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Queues a gradient; returns the new version when it completed a set.
    pub fn submit(&mut self, message: GradientMessage) -> Option<u64> {
        if !message.policy.same_layout(&self.policy) || !message.critic.same_layout(&self.critic) {
            self.rejected += 1;
            warn!("rejected gradient from learner {}: parameter layout mismatch", message.learner);
            return None;
        }
        self.pending.push(message);
        if self.pending.len() < self.gradients_to_average {
            return None;
        }
        // Fixed summation order regardless of arrival order.
        self.pending.sort_by_key(|g| (g.learner, g.version));
        let batch = std::mem::take(&mut self.pending);
        parameter_server_step(
            &mut self.policy,
            &mut self.critic,
            &mut self.policy_state,
            &mut self.critic_state,
            &self.policy_adam,
            &self.critic_adam,
            &batch,
        )
        .expect("layouts checked on submit");
        self.version += 1;
        Some(self.version)
    }
}
