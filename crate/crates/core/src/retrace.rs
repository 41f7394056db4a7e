//! Retrace targets for off-policy evaluation.
//!
//! For a segment `i..L` the target is
//! `Q_ret(i) = Q'(i) + sum_{j>=i} gamma^(j-i) (prod_{k=i+1..j} c_k) delta_j`
//! with `delta_j = r_j + gamma * E_pi'[Q'(s_{j+1}, .)] - Q'(s_j, a_j)` and
//! `c_k = min(1, pi'(a_k|s_k) / b(a_k|s_k))`. It is computed backwards with
//! `G_i = delta_i + gamma * c_{i+1} * G_{i+1}`, `Q_ret = Q' + G`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetraceError {
    #[error("retrace needs at least one step")]
    EmptyTrajectory,
    #[error("behavior density at step {index} is {value}, must be finite and positive")]
    BehaviorDensity { index: usize, value: f64 },
    #[error("target density at step {index} is {value}, must be finite and non-negative")]
    TargetDensity { index: usize, value: f64 },
    #[error("input sequences have mismatched lengths")]
    Length,
}

/// `c = min(1, pi / b)` per step.
pub fn truncated_is_weights(target: &[f64], behavior: &[f64]) -> Result<Vec<f64>, RetraceError> {
    if target.len() != behavior.len() {
        return Err(RetraceError::Length);
    }
    target
        .iter()
        .zip(behavior)
        .enumerate()
        .map(|(index, (&p, &b))| {
            if !(b.is_finite() && b > 0.0) {
                return Err(RetraceError::BehaviorDensity { index, value: b });
            }
            if !(p.is_finite() && p >= 0.0) {
                return Err(RetraceError::TargetDensity { index, value: p });
            }
            Ok((p / b).min(1.0))
        })
        .collect()
}

/// Log-space variant of [`truncated_is_weights`]; a behavior log density of
/// `-inf` (zero density) or NaN is rejected.
pub fn truncated_is_weights_log(log_target: &[f64], log_behavior: &[f64]) -> Result<Vec<f64>, RetraceError> {
    if log_target.len() != log_behavior.len() {
        return Err(RetraceError::Length);
    }
    log_target
        .iter()
        .zip(log_behavior)
        .enumerate()
        .map(|(index, (&lp, &lb))| {
            if !lb.is_finite() {
                return Err(RetraceError::BehaviorDensity { index, value: lb.exp() });
            }
            if lp.is_nan() || lp == f64::INFINITY {
                return Err(RetraceError::TargetDensity { index, value: lp.exp() });
            }
            Ok((lp - lb).exp().min(1.0))
        })
        .collect()
}

/// Retrace targets for one task over a segment.
///
/// * `q` - `Q'(s_j, a_j)` under the target critic.
/// * `next_value` - `E_pi'[Q'(s_{j+1}, .)]`, already zero past episode end.
/// * `c` - truncated importance weights for the same steps.
pub fn retrace_targets(
    q: &[f64],
    next_value: &[f64],
    rewards: &[f64],
    c: &[f64],
    gamma: f64,
) -> Result<Vec<f64>, RetraceError> {
    let n = q.len();
    if n == 0 {
        return Err(RetraceError::EmptyTrajectory);
    }
    if next_value.len() != n || rewards.len() != n || c.len() != n {
        return Err(RetraceError::Length);
    }
    let mut out = vec![0.0; n];
    let mut g = 0.0;
    for i in (0..n).rev() {
        let delta = rewards[i] + gamma * next_value[i] - q[i];
        g = if i + 1 < n { delta + gamma * c[i + 1] * g } else { delta };
        out[i] = q[i] + g;
    }
    Ok(out)
}

/// Tabular MDPs and the expected Retrace operator, used as an exact fixture.
pub mod tabular {
    use rand::Rng;

    /// `p[(s * A + a) * S + s']`, `r[s * A + a]`.
    #[derive(Debug, Clone, PartialEq)]
    pub struct TabularMdp {
        pub n_states: usize,
        pub n_actions: usize,
        pub p: Vec<f64>,
        pub r: Vec<f64>,
        pub gamma: f64,
    }

    impl TabularMdp {
        pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Self {
            let mut p = vec![0.0; n_states * n_actions * n_states];
            for row in p.chunks_mut(n_states) {
                row.iter_mut().for_each(|v| *v = rng.random::<f64>() + 1e-3);
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= total);
            }
            let r = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
            Self { n_states, n_actions, p, r, gamma }
        }

        pub fn transition(&self, s: usize, a: usize) -> &[f64] {
            let i = (s * self.n_actions + a) * self.n_states;
            &self.p[i..i + self.n_states]
        }

        /// `sum_b pi(b|s) q(s, b)`.
        pub fn expected(&self, q: &[f64], pi: &[f64], s: usize) -> f64 {
            (0..self.n_actions).map(|b| pi[s * self.n_actions + b] * q[s * self.n_actions + b]).sum()
        }

        /// Policy-evaluation Bellman backup `r + gamma P V_pi(q)`.
        pub fn bellman(&self, q: &[f64], pi: &[f64]) -> Vec<f64> {
            let (ns, na) = (self.n_states, self.n_actions);
            let v: Vec<f64> = (0..ns).map(|s| self.expected(q, pi, s)).collect();
            (0..ns * na)
                .map(|sa| {
                    let next: f64 = self.transition(sa / na, sa % na).iter().zip(&v).map(|(p, v)| p * v).sum();
                    self.r[sa] + self.gamma * next
                })
                .collect()
        }
    }

    pub fn random_policy<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Vec<f64> {
        let mut pi = vec![0.0; n_states * n_actions];
        for row in pi.chunks_mut(n_actions) {
            row.iter_mut().for_each(|v| *v = rng.random::<f64>() + 0.05);
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
        pi
    }

    /// Expected Retrace operator `R Q = Q + G` where
    /// `G = delta + gamma P (mu c) G` is solved by fixed-point iteration.
    pub fn retrace_operator(mdp: &TabularMdp, q: &[f64], pi: &[f64], mu: &[f64]) -> Vec<f64> {
        let (ns, na) = (mdp.n_states, mdp.n_actions);
        let delta: Vec<f64> = mdp.bellman(q, pi).iter().zip(q).map(|(b, q)| b - q).collect();
        let trace: Vec<f64> = pi.iter().zip(mu).map(|(p, m)| m * (p / m).min(1.0)).collect();
        let mut g = delta.clone();
        for _ in 0..10_000 {
            let w: Vec<f64> = (0..ns).map(|s| (0..na).map(|b| trace[s * na + b] * g[s * na + b]).sum()).collect();
            let next: Vec<f64> = (0..ns * na)
                .map(|sa| {
                    let e: f64 = mdp.transition(sa / na, sa % na).iter().zip(&w).map(|(p, w)| p * w).sum();
                    delta[sa] + mdp.gamma * e
                })
                .collect();
            let diff = next.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            g = next;
            if diff < 1e-15 {
                break;
            }
        }
        q.iter().zip(&g).map(|(q, g)| q + g).collect()
    }
}
