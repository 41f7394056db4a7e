use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sacx_core::nn::{AdamConfig, AdamState, ParamLayout, ParamVector};
use sacx_core::trajectory::{Trajectory, Transition};
use sacx_runtime::checkpoint::Checkpoint;
use sacx_runtime::metrics::read_metrics;
use sacx_runtime::{
    parameter_server_step, run_scripted_distributed, run_training, GradientMessage, MetricRecord, ParameterServer,
    ReplayBuffer, RunConfig,
};

fn tiny_chain(seed: u64) -> RunConfig {
    let mut c = RunConfig::chain_fixture();
    c.runtime.seed = seed;
    c.runtime.episodes_per_actor = 30;
    c.evaluation.every = 10;
    c.evaluation.episodes = 2;
    c
}

fn one_step(episode: u64) -> Trajectory {
    Trajectory {
        steps: vec![Transition {
            observation: vec![0.0],
            action: vec![0.0],
            rewards: vec![0.0],
            behavior_task: 0,
            behavior_log_density: -1.0,
        }],
        final_observation: vec![0.0],
        terminal: true,
        actor: 0,
        episode,
    }
}

#[test]
fn replay_sampling_is_uniform_within_three_sigma() {
    let mut replay = ReplayBuffer::new(10);
    for e in 0..25 {
        replay.append(Arc::new(one_step(e))).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 50_000;
    let mut counts = [0usize; 10];
    for t in replay.sample(&mut rng, draws).unwrap() {
        // Only the newest 10 episodes survive eviction.
        counts[(t.episode - 15) as usize] += 1;
    }
    let p = 0.1;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn single_process_runs_are_bit_reproducible() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let a = run_training(&tiny_chain(11), Some(dirs[0].path())).unwrap();
    let b = run_training(&tiny_chain(11), Some(dirs[1].path())).unwrap();
    let other = run_training(&tiny_chain(12), Some(dirs[2].path())).unwrap();
    let bytes = |i: usize| std::fs::read(dirs[i].path().join("metrics.jsonl")).unwrap();
    assert_eq!(bytes(0), bytes(1));
    assert_ne!(bytes(0), bytes(2));
    assert_eq!(a.final_policy.as_ref().unwrap().values(), b.final_policy.as_ref().unwrap().values());
    assert_eq!(a.final_critic.as_ref().unwrap().values(), b.final_critic.as_ref().unwrap().values());
    assert_ne!(a.final_policy.unwrap().values(), other.final_policy.unwrap().values());
    let ckpt = |i: usize| std::fs::read(dirs[i].path().join("checkpoint_final.bin")).unwrap();
    assert_eq!(ckpt(0), ckpt(1));
}

#[test]
fn run_outputs_are_written_and_readable() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_chain(5);
    c.output.checkpoint_every = 10;
    c.output.dump_trajectories = true;
    let report = run_training(&c, Some(dir.path())).unwrap();
    assert_eq!(report.episodes, 30);
    assert_eq!(report.updates, 30 * 4);
    assert_eq!(report.checkpoints.len(), 4);
    for name in ["config.toml", "report.json", "scheduler.json", "trajectories.jsonl", "scheduler_00000020.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let back = RunConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(back, c);
    let ck = Checkpoint::load(report.checkpoints.last().unwrap()).unwrap();
    assert_eq!(ck.version, report.updates);
    assert_eq!(ck.policy.values(), report.final_policy.as_ref().unwrap().values());

    let records = read_metrics(&dir.path().join("metrics.jsonl")).unwrap();
    assert!(matches!(records[0], MetricRecord::Run { .. }));
    let episodes = records.iter().filter(|r| matches!(r, MetricRecord::Episode { .. })).count();
    let evals = records.iter().filter(|r| matches!(r, MetricRecord::Eval { .. })).count();
    let learners = records.iter().filter(|r| matches!(r, MetricRecord::Learner { .. })).count();
    assert_eq!((episodes, evals, learners), (30, 3, 120));
    let dumped = std::fs::read_to_string(dir.path().join("trajectories.jsonl")).unwrap();
    assert_eq!(dumped.lines().count(), 30 * 10);
}

#[test]
fn actor_ids_and_versions_in_single_process_mode() {
    let mut c = tiny_chain(2);
    c.runtime.actors = 2;
    c.runtime.gradients_to_average = 2;
    c.runtime.learners = 2;
    c.runtime.episodes_per_actor = 6;
    let dir = tempfile::tempdir().unwrap();
    run_training(&c, Some(dir.path())).unwrap();
    let records = read_metrics(&dir.path().join("metrics.jsonl")).unwrap();
    let mut actors = BTreeSet::new();
    let mut last = 0;
    for r in &records {
        if let MetricRecord::Episode { actor, version, .. } = r {
            actors.insert(*actor);
            assert!(*version >= last);
            last = *version;
        }
    }
    assert_eq!(actors, BTreeSet::from([0, 1]));
}

#[test]
fn threaded_run_completes_with_monotone_versions() {
    let mut c = tiny_chain(9);
    c.runtime.single_process = false;
    c.runtime.actors = 2;
    c.runtime.learners = 2;
    c.runtime.gradients_to_average = 2;
    c.runtime.episodes_per_actor = 40;
    let dir = tempfile::tempdir().unwrap();
    let report = run_training(&c, Some(dir.path())).unwrap();
    assert_eq!(report.episodes, 80);
    assert!(report.final_policy.unwrap().is_finite());
    let records = read_metrics(&dir.path().join("metrics.jsonl")).unwrap();
    let mut per_actor = [0u64; 2];
    let mut seen = BTreeSet::new();
    for r in &records {
        if let MetricRecord::Episode { actor, episode, version, .. } = r {
            assert!(*version >= per_actor[*actor], "actor {actor} went back in version");
            per_actor[*actor] = *version;
            assert!(seen.insert((*actor, *episode)));
        }
    }
    assert_eq!(seen.len(), 80);
}

fn layout(n: usize) -> Arc<ParamLayout> {
    let mut l = ParamLayout::new();
    l.push("w", &[n]);
    Arc::new(l)
}

fn random_vector<R: Rng>(rng: &mut R, n: usize) -> ParamVector {
    ParamVector::from_values(layout(n), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn scripted_distributed_server_matches_sequential_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (np, nc, steps, g) = (7, 5, 25, 2);
    let policy = random_vector(&mut rng, np);
    let critic = random_vector(&mut rng, nc);
    let scripts: Vec<Vec<(ParamVector, ParamVector)>> = (0..g)
        .map(|_| (0..steps).map(|_| (random_vector(&mut rng, np), random_vector(&mut rng, nc))).collect())
        .collect();
    let adam = AdamConfig { lr: 1e-2, ..AdamConfig::default() };

    let (mut p, mut c) = (policy.clone(), critic.clone());
    let (mut sp, mut sc) = (AdamState::new(np), AdamState::new(nc));
    for k in 0..steps {
        let batch: Vec<GradientMessage> = (0..g)
            .map(|l| GradientMessage {
                learner: l,
                version: k as u64,
                policy: scripts[l][k].0.clone(),
                critic: scripts[l][k].1.clone(),
            })
            .collect();
        parameter_server_step(&mut p, &mut c, &mut sp, &mut sc, &adam, &adam, &batch).unwrap();
    }

    for _ in 0..5 {
        let server = ParameterServer::new(policy.clone(), critic.clone(), adam, adam, g);
        let done = run_scripted_distributed(server, scripts.clone()).unwrap();
        assert_eq!(done.version(), steps as u64);
        assert_eq!(done.policy().values(), p.values());
        assert_eq!(done.critic().values(), c.values());
    }
}
