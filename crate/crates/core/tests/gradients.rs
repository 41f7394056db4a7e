//! Reverse-mode gradients against an independent forward pass and central
//! finite differences.

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sacx_core::learner::{critic_loss_and_grad, policy_loss_and_grad, LearnerConfig, Models, NetCritic, RetraceBatch};
use sacx_core::nn::{
    Critic, GaussianPolicy, HeadGroup, MultiHeadMlp, NetWidths, NetworkSpec, OutputActivation, ParamVector,
};

/// Plain-loop forward pass written from the architecture description only.
fn naive_forward(spec: &NetworkSpec, p: &ParamVector, x: &[f64], head: usize) -> Vec<f64> {
    let linear = |name: &str, input: &[f64]| -> Vec<f64> {
        let w = p.block(&format!("{name}.w")).unwrap();
        let b = p.block(&format!("{name}.b")).unwrap();
        let n_in = input.len();
        (0..b.len()).map(|o| b[o] + (0..n_in).map(|i| w[o * n_in + i] * input[i]).sum::<f64>()).collect()
    };
    let elu = |v: f64| if v > 0.0 { v } else { v.exp() - 1.0 };
    let mut h = x.to_vec();
    for l in 0..spec.trunk.len() {
        h = linear(&format!("trunk.{l}"), &h).into_iter().map(elu).collect();
        if l == 0 && spec.layer_norm {
            let g = p.block("trunk.ln.gain").unwrap();
            let b = p.block("trunk.ln.bias").unwrap();
            let n = h.len() as f64;
            let mean = h.iter().sum::<f64>() / n;
            let var = h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            h = h.iter().enumerate().map(|(k, v)| (v - mean) / (var + 1e-5).sqrt() * g[k] + b[k]).collect();
        }
    }
    let layers = spec.head_hidden.len() + 1;
    for j in 0..layers {
        let z = linear(&format!("head.{head}.{j}"), &h);
        h = if j + 1 < layers {
            z.into_iter().map(elu).collect()
        } else {
            match spec.output {
                OutputActivation::Tanh => z.into_iter().map(f64::tanh).collect(),
                OutputActivation::Linear => z,
            }
        };
    }
    h
}

fn random_spec(rng: &mut ChaCha8Rng) -> NetworkSpec {
    let trunk_layers = rng.random_range(1..3);
    NetworkSpec {
        input_dim: rng.random_range(1..6),
        trunk: (0..trunk_layers).map(|_| rng.random_range(2..7)).collect(),
        head_hidden: (0..rng.random_range(0..2)).map(|_| rng.random_range(2..6)).collect(),
        output_dim: rng.random_range(1..4),
        heads: rng.random_range(1..4),
        output: if rng.random() { OutputActivation::Tanh } else { OutputActivation::Linear },
        layer_norm: rng.random(),
    }
}

fn random_params(net: &MultiHeadMlp, rng: &mut ChaCha8Rng) -> ParamVector {
    let mut p = ParamVector::zeros(net.layout().clone());
    p.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    p
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

#[test]
fn forward_matches_independent_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let spec = random_spec(&mut rng);
        let net = MultiHeadMlp::new(spec.clone()).unwrap();
        let p = random_params(&net, &mut rng);
        let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        for head in 0..spec.heads {
            let got = net.forward_one(&p, &x, head).unwrap();
            let want = naive_forward(&spec, &p, &x, head);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12, "{g} vs {w}");
            }
        }
    }
}

#[test]
fn head_isolation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let policy = GaussianPolicy::new(4, 2, 3, &NetWidths::policy_default()).unwrap();
    let p = random_params(policy.net(), &mut rng);
    let obs = [0.1, -0.4, 0.9, 0.3];
    let before: Vec<_> = (0..3).map(|k| policy.policy_forward(&p, &obs, k).unwrap()).collect();
    let mut q = p.clone();
    for name in ["head.1.0.w", "head.1.1.b"] {
        q.block_mut(name).unwrap().iter_mut().for_each(|v| *v += 0.5);
    }
    assert_eq!(policy.policy_forward(&q, &obs, 0).unwrap(), before[0]);
    assert_eq!(policy.policy_forward(&q, &obs, 2).unwrap(), before[2]);
    assert_ne!(policy.policy_forward(&q, &obs, 1).unwrap(), before[1]);

    // Gradient of head 0's output has no support on head 1's parameters.
    let x = Array2::from_shape_vec((1, 4), obs.to_vec()).unwrap();
    let f = policy.net().forward(&p, x.view(), &[HeadGroup::new(0, 0..1)], true).unwrap();
    let g = policy.net().backward(&p, &f, Array2::ones((1, 4)).view(), true, false).unwrap().params.unwrap();
    for block in p.layout().blocks().iter().filter(|b| b.name.starts_with("head.1.")) {
        assert!(g.block(&block.name).unwrap().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn linear_least_squares_gradient_is_closed_form() {
    // One linear head with no trunk: out = X w + b.
    let spec = NetworkSpec {
        input_dim: 3,
        trunk: vec![],
        head_hidden: vec![],
        output_dim: 1,
        heads: 1,
        output: OutputActivation::Linear,
        layer_norm: false,
    };
    let net = MultiHeadMlp::new(spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut p = random_params(&net, &mut rng);
    p.block_mut("head.0.0.b").unwrap()[0] = 0.0;
    let x = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
    let y: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = net.forward(&p, x.view(), &[HeadGroup::new(0, 0..6)], true).unwrap();
    let resid: Vec<f64> = (0..6).map(|i| f.output[[i, 0]] - y[i]).collect();
    let up = Array2::from_shape_fn((6, 1), |(i, _)| 2.0 * resid[i]);
    let g = net.backward(&p, &f, up.view(), true, false).unwrap().params.unwrap();
    let gw = g.block("head.0.0.w").unwrap();
    for k in 0..3 {
        let want: f64 = (0..6).map(|i| 2.0 * x[[i, k]] * resid[i]).sum();
        assert!((gw[k] - want).abs() < 1e-12);
    }
}

#[test]
fn constant_network_has_zero_gradient() {
    let net = MultiHeadMlp::new(NetworkSpec {
        input_dim: 2,
        trunk: vec![3],
        head_hidden: vec![],
        output_dim: 1,
        heads: 1,
        output: OutputActivation::Linear,
        layer_norm: false,
    })
    .unwrap();
    let mut p = ParamVector::zeros(net.layout().clone());
    p.block_mut("head.0.0.b").unwrap()[0] = 3.0;
    let x = Array2::from_shape_vec((2, 2), vec![0.5, -0.2, 1.0, 2.0]).unwrap();
    let f = net.forward(&p, x.view(), &[HeadGroup::new(0, 0..2)], true).unwrap();
    let g = net.backward(&p, &f, Array2::zeros((2, 1)).view(), true, true).unwrap();
    assert!(g.params.unwrap().values().iter().all(|v| *v == 0.0));
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let spec = random_spec(&mut rng);
        let net = MultiHeadMlp::new(spec.clone()).unwrap();
        let p = random_params(&net, &mut rng);
        let rows = rng.random_range(1..4);
        let x = Array2::from_shape_fn((rows, spec.input_dim), |_| rng.random_range(-1.5..1.5));
        let groups: Vec<HeadGroup> = (0..spec.heads).map(|k| HeadGroup::new(k, 0..rows)).collect();
        let out_rows = rows * spec.heads;
        let w = Array2::from_shape_fn((out_rows, spec.output_dim), |_| rng.random_range(-1.0..1.0));
        let loss = |p: &ParamVector, x: &Array2<f64>| -> f64 {
            let f = net.forward(p, x.view(), &groups, false).unwrap();
            (&f.output * &w).sum()
        };
        let f = net.forward(&p, x.view(), &groups, true).unwrap();
        let g = net.backward(&p, &f, w.view(), true, true).unwrap();
        let gp = g.params.unwrap();
        for i in 0..p.len() {
            let mut a = p.clone();
            a.values_mut()[i] += h;
            let mut b = p.clone();
            b.values_mut()[i] -= h;
            let n = (loss(&a, &x) - loss(&b, &x)) / (2.0 * h);
            worst = worst.max(rel_err(gp.values()[i], n));
        }
        let gx = g.input.unwrap();
        for r in 0..rows {
            for c in 0..spec.input_dim {
                let mut a = x.clone();
                a[[r, c]] += h;
                let mut b = x.clone();
                b[[r, c]] -= h;
                let n = (loss(&p, &a) - loss(&p, &b)) / (2.0 * h);
                worst = worst.max(rel_err(gx[[r, c]], n));
            }
        }
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

fn small_models(obs: usize, act: usize, tasks: usize) -> Models {
    let pw = NetWidths { trunk: vec![6, 5], head_hidden: vec![4], layer_norm: true };
    let cw = NetWidths { trunk: vec![7], head_hidden: vec![5], layer_norm: true };
    Models {
        policy: GaussianPolicy::new(obs, act, tasks, &pw).unwrap(),
        critic: Critic::new(obs, act, tasks, &cw).unwrap(),
        tasks,
    }
}

#[test]
fn policy_and_critic_losses_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let (obs, act, tasks) = (rng.random_range(1..5), rng.random_range(1..3), rng.random_range(1..4));
        let models = small_models(obs, act, tasks);
        let pp = random_params(models.policy.net(), &mut rng);
        let cp = random_params(models.critic.net(), &mut rng);
        let n = rng.random_range(1..5);
        let states = Array2::from_shape_fn((n, obs), |_| rng.random_range(-1.0..1.0));
        let noise = Array2::from_shape_simple_fn((tasks * n, act), || rng.sample(StandardNormal));
        let config = LearnerConfig { alpha: [0.0, 0.1, 0.5][trial % 3], ..Default::default() };
        let q = NetCritic { critic: &models.critic, params: &cp };
        let loss = |p: &ParamVector| {
            policy_loss_and_grad(&models.policy, p, &q, states.view(), noise.view(), &config).unwrap()
        };
        let out = loss(&pp);
        for i in 0..pp.len() {
            let mut a = pp.clone();
            a.values_mut()[i] += h;
            let mut b = pp.clone();
            b.values_mut()[i] -= h;
            let n = (loss(&a).loss - loss(&b).loss) / (2.0 * h);
            worst = worst.max(rel_err(out.gradient.values()[i], n));
        }

        let inputs = Array2::from_shape_fn((n, obs + act), |_| rng.random_range(-1.0..1.0));
        let targets = Array2::from_shape_fn((tasks, n), |_| rng.random_range(-2.0..2.0));
        let batch = RetraceBatch { inputs, targets, states: states.clone(), behavior_counts: vec![] };
        let c = critic_loss_and_grad(&models.critic, &cp, &batch).unwrap();
        for i in 0..cp.len() {
            let mut a = cp.clone();
            a.values_mut()[i] += h;
            let mut b = cp.clone();
            b.values_mut()[i] -= h;
            let la = critic_loss_and_grad(&models.critic, &a, &batch).unwrap().loss;
            let lb = critic_loss_and_grad(&models.critic, &b, &batch).unwrap().loss;
            worst = worst.max(rel_err(c.gradient.values()[i], (la - lb) / (2.0 * h)));
        }
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

proptest! {
    #[test]
    fn std_stays_in_variance_range(seed in any::<u64>(), scale in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = GaussianPolicy::new(3, 2, 2, &NetWidths { trunk: vec![4], head_hidden: vec![], layer_norm: true }).unwrap();
        let mut p = random_params(policy.net(), &mut rng);
        p.scale(scale);
        let obs: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let out = policy.policy_forward(&p, &obs, 1).unwrap();
        for s in out.std {
            prop_assert!(s * s >= 0.3 - 1e-12 && s * s <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn flatten_round_trip_is_bit_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = MultiHeadMlp::new(random_spec(&mut rng)).unwrap();
        let p = random_params(&net, &mut rng);
        let back = ParamVector::flatten(net.layout().clone(), &p.unflatten()).unwrap();
        prop_assert_eq!(back, p);
    }
}
