//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::params::{ParamError, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// One descent step `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_update(
    params: &mut ParamVector,
    grad: &ParamVector,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<(), ParamError> {
    if !params.same_layout(grad) {
        return Err(ParamError::LayoutMismatch);
    }
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(ParamError::Length { expected: params.len(), got: state.m.len() });
    }
    state.t += 1;
    let bc1 = 1.0 - config.beta1.powi(state.t as i32);
    let bc2 = 1.0 - config.beta2.powi(state.t as i32);
    let AdamConfig { lr, beta1, beta2, eps } = *config;
    for (((p, g), m), v) in params.values_mut().iter_mut().zip(grad.values()).zip(&mut state.m).zip(&mut state.v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamLayout;
    use std::sync::Arc;

    fn vecs(n: usize) -> (ParamVector, ParamVector) {
        let mut l = ParamLayout::new();
        l.push("x", &[n]);
        let l = Arc::new(l);
        (ParamVector::zeros(l.clone()), ParamVector::zeros(l))
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut p, g) = vecs(4);
        p.fill(0.7);
        let mut s = AdamState::new(4);
        adam_update(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        assert!(p.values().iter().all(|v| *v == 0.7));
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut p, mut g) = vecs(3);
        g.fill(1.0);
        let mut s = AdamState::new(3);
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        adam_update(&mut p, &g, &mut s, &cfg).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction.
        for v in p.values() {
            assert!((v + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
        }
    }
}
