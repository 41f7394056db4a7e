//! Canned desk-scale experiments.

use sacx_core::env::{EnvConfig, ObjectSpec, TabletopConfig};
use sacx_core::learner::LearnerConfig;
use sacx_core::nn::{AdamConfig, NetWidths};
use sacx_core::scheduler::{ScheduleConfig, ScheduleMode};
use sacx_core::tasks::standard_auxiliary_names;
use sacx_runtime::{EvalConfig, NetworkConfig, OutputConfig, RunConfig, RuntimeConfig, TaskConfig};

use crate::experiment::ExperimentSpec;

pub const STACK_EPISODE_LENGTH: usize = 60;

/// Two blocks on a 30 cm planar table; the small block goes on the wide one.
/// The hand starts high and the fingers close slowly, so random actions
/// almost never stack by accident.
pub fn stack_table() -> TabletopConfig {
    TabletopConfig {
        episode_length: STACK_EPISODE_LENGTH,
        workspace_min: [-0.15, 0.0, 0.0],
        workspace_max: [0.15, 0.0, 0.25],
        objects: vec![
            ObjectSpec { half_extent: [0.025, 0.025, 0.025], start: [-0.05, 0.0] },
            ObjectSpec { half_extent: [0.04, 0.025, 0.04], start: [0.05, 0.0] },
        ],
        hand_speed: 0.5,
        finger_speed: 3.0,
        grasp_radius: 0.035,
        hand_height: [0.10, 0.15],
        ..TabletopConfig::default()
    }
}

/// Eight hand-position rewards at sites away from the blocks. They are
/// learnable but say nothing about stacking.
pub fn distractor_names() -> Vec<String> {
    [(-0.09, 0.22), (-0.03, 0.22), (0.03, 0.22), (0.09, 0.22), (-0.09, 0.16), (0.09, 0.16), (-0.03, 0.19), (0.03, 0.19)]
        .iter()
        .map(|(x, z)| format!("HAND_NEAR({x},0,{z},0.02)"))
        .collect()
}

/// The 13 standard auxiliaries with 8 replaced by distractors.
pub fn distractor_auxiliary_names() -> Vec<String> {
    let keep = ["TOUCH", "MOVE(1)", "CLOSE(1,2)", "ABOVE(1,2)", "ABOVECLOSE(1,2)"];
    keep.iter().map(|s| s.to_string()).chain(distractor_names()).collect()
}

fn desk_widths() -> NetWidths {
    NetWidths { trunk: vec![64], head_hidden: vec![32], layer_norm: true }
}

/// Single-process tabletop stacking run at desk scale.
pub fn stack_run_config() -> RunConfig {
    let adam = AdamConfig { lr: 2e-3, ..AdamConfig::default() };
    RunConfig {
        env: EnvConfig::Tabletop(stack_table()),
        tasks: TaskConfig { auxiliary: standard_auxiliary_names(), external: vec!["STACK(1)".into()] },
        networks: NetworkConfig { policy: desk_widths(), critic: desk_widths() },
        learner: LearnerConfig {
            n_exp: 2,
            batch_size: 4,
            window: 10,
            target_period: 100,
            policy_adam: adam,
            critic_adam: adam,
            ..LearnerConfig::default()
        },
        scheduler: ScheduleConfig { period: STACK_EPISODE_LENGTH / 2, switches: 2, ..ScheduleConfig::default() },
        runtime: RuntimeConfig {
            actors: 1,
            learners: 1,
            gradients_to_average: 1,
            single_process: true,
            updates_per_episode: 2,
            ..RuntimeConfig::default()
        },
        evaluation: EvalConfig { every: 1, episodes: 1, deterministic: true },
        output: OutputConfig { learner_metrics_every: 100, checkpoint_every: 0, dump_trajectories: false },
    }
}

pub fn distractor_run_config() -> RunConfig {
    let mut c = stack_run_config();
    c.tasks.auxiliary = distractor_auxiliary_names();
    c
}

pub fn stack_experiment() -> ExperimentSpec {
    ExperimentSpec {
        name: "stack".into(),
        modes: vec![ScheduleMode::Uniform, ScheduleMode::Learned, ScheduleMode::MainOnly],
        seeds: (0..5).collect(),
        episodes: 15_000,
        threshold: 0.5,
        window: 50,
        stop_at_threshold: true,
        base: stack_run_config(),
    }
}

pub fn distractor_experiment() -> ExperimentSpec {
    ExperimentSpec {
        name: "distractors".into(),
        modes: vec![ScheduleMode::Uniform, ScheduleMode::Learned],
        base: distractor_run_config(),
        ..stack_experiment()
    }
}

/// Learned scheduling on the slippery 5-state chain.
pub fn chain_experiment() -> ExperimentSpec {
    let base = RunConfig::chain_fixture();
    ExperimentSpec {
        name: "chain".into(),
        modes: vec![ScheduleMode::Learned],
        seeds: vec![0],
        episodes: base.runtime.episodes_per_actor,
        threshold: 0.0,
        window: 1,
        stop_at_threshold: false,
        base,
    }
}
