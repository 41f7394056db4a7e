//! Retrace against exact tabular policy evaluation.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sacx_core::retrace::tabular::{random_policy, retrace_operator, TabularMdp};
use sacx_core::retrace::{retrace_targets, truncated_is_weights};

/// `Q_pi = (I - gamma P Pi)^-1 r` by LU.
fn exact_q(mdp: &TabularMdp, pi: &[f64]) -> Vec<f64> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let n = ns * na;
    let mut m = DMatrix::<f64>::identity(n, n);
    for sa in 0..n {
        let p = mdp.transition(sa / na, sa % na);
        for s2 in 0..ns {
            for b in 0..na {
                m[(sa, s2 * na + b)] -= mdp.gamma * p[s2] * pi[s2 * na + b];
            }
        }
    }
    let x = m.lu().solve(&DVector::from_vec(mdp.r.clone())).expect("nonsingular");
    x.iter().copied().collect()
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn iterated_operator_reaches_exact_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let mdp = TabularMdp::random(5, 2, 0.9, &mut rng);
        let pi = random_policy(5, 2, &mut rng);
        let mu = random_policy(5, 2, &mut rng);
        let target = exact_q(&mdp, &pi);
        let mut q = vec![0.0; 10];
        for _ in 0..200 {
            let next = retrace_operator(&mdp, &q, &pi, &mu);
            let before = sup(&q, &target);
            let after = sup(&next, &target);
            assert!(after <= mdp.gamma * before + 1e-12, "no contraction: {after} vs {before}");
            q = next;
            if after < 1e-9 {
                break;
            }
        }
        assert!(sup(&q, &target) <= 1e-6);
    }
}

/// Exact expectation of the sampled targets over all length-`len` paths
/// from `(s, a)`, following `mu`, with a bootstrap after the last step.
fn expected_sampled_target(mdp: &TabularMdp, q: &[f64], pi: &[f64], mu: &[f64], s: usize, a: usize, len: usize) -> f64 {
    let na = mdp.n_actions;
    let ns = mdp.n_states;
    let mut total = 0.0;
    // Enumerate (s1, a1, ..., s_len) given (s0, a0).
    let choices = (ns * na).pow(len as u32 - 1) * ns;
    for code in 0..choices {
        let mut c = code;
        let mut states = vec![s];
        let mut actions = vec![a];
        let mut prob = 1.0;
        for step in 0..len {
            let s_next = c % ns;
            c /= ns;
            prob *= mdp.transition(states[step], actions[step])[s_next];
            states.push(s_next);
            if step + 1 < len {
                let a_next = c % na;
                c /= na;
                prob *= mu[s_next * na + a_next];
                actions.push(a_next);
            }
        }
        let qs: Vec<f64> = (0..len).map(|j| q[states[j] * na + actions[j]]).collect();
        let next: Vec<f64> = (0..len).map(|j| mdp.expected(q, pi, states[j + 1])).collect();
        let r: Vec<f64> = (0..len).map(|j| mdp.r[states[j] * na + actions[j]]).collect();
        let tp: Vec<f64> = (0..len).map(|j| pi[states[j] * na + actions[j]]).collect();
        let bp: Vec<f64> = (0..len).map(|j| mu[states[j] * na + actions[j]]).collect();
        let w = truncated_is_weights(&tp, &bp).unwrap();
        total += prob * retrace_targets(&qs, &next, &r, &w, mdp.gamma).unwrap()[0];
    }
    total
}

/// Operator with the trace cut after `len` steps.
fn truncated_operator(mdp: &TabularMdp, q: &[f64], pi: &[f64], mu: &[f64], len: usize) -> Vec<f64> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let delta: Vec<f64> = mdp.bellman(q, pi).iter().zip(q).map(|(b, q)| b - q).collect();
    let mut g = delta.clone();
    for _ in 1..len {
        let w: Vec<f64> = (0..ns)
            .map(|s| (0..na).map(|b| mu[s * na + b] * (pi[s * na + b] / mu[s * na + b]).min(1.0) * g[s * na + b]).sum())
            .collect();
        g = (0..ns * na)
            .map(|sa| {
                delta[sa] + mdp.gamma * mdp.transition(sa / na, sa % na).iter().zip(&w).map(|(p, w)| p * w).sum::<f64>()
            })
            .collect();
    }
    q.iter().zip(&g).map(|(q, g)| q + g).collect()
}

#[test]
fn sampled_targets_are_unbiased_for_the_operator() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let mdp = TabularMdp::random(5, 2, 0.8, &mut rng);
        let pi = random_policy(5, 2, &mut rng);
        let mu = random_policy(5, 2, &mut rng);
        let q: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        for len in 1..=3 {
            let want = truncated_operator(&mdp, &q, &pi, &mu, len);
            for s in 0..5 {
                for a in 0..2 {
                    let got = expected_sampled_target(&mdp, &q, &pi, &mu, s, a, len);
                    assert!((got - want[s * 2 + a]).abs() < 1e-12, "len {len}: {got} vs {}", want[s * 2 + a]);
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn inflating_behavior_density_never_raises_weights(
        p in prop::collection::vec(1e-3f64..1.0, 1..6),
        b in prop::collection::vec(1e-3f64..1.0, 6),
        scale in 1.0f64..10.0,
    ) {
        let b = &b[..p.len()];
        let base = truncated_is_weights(&p, b).unwrap();
        let scaled: Vec<f64> = b.iter().map(|x| x * scale).collect();
        let inflated = truncated_is_weights(&p, &scaled).unwrap();
        for (x, y) in base.iter().zip(&inflated) {
            prop_assert!(*y <= *x);
            prop_assert!(*y > 0.0 && *x <= 1.0);
        }
        prop_assert_eq!(truncated_is_weights(&p, &p).unwrap(), vec![1.0; p.len()]);
    }

    #[test]
    fn on_policy_length_three_matches_n_step_return(
        q in prop::array::uniform3(-5.0f64..5.0),
        r in prop::array::uniform3(-1.0f64..1.0),
        tail in -5.0f64..5.0,
        gamma in 0.01f64..0.99,
    ) {
        let v = [q[1], q[2], tail];
        let t = retrace_targets(&q, &v, &r, &[1.0; 3], gamma).unwrap();
        let want = r[0] + gamma * r[1] + gamma * gamma * r[2] + gamma.powi(3) * tail;
        prop_assert!((t[0] - want).abs() < 1e-12);
    }
}
