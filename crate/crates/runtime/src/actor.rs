//! Actor episodes and evaluation rollouts.

use rand::Rng;
use rand_distr::StandardNormal;
use sacx_core::env::Environment;
use sacx_core::nn::{log_density, GaussianPolicy, ParamVector};
use sacx_core::scheduler::{schedule_return, ScheduleTrace, Scheduler};
use sacx_core::tasks::TaskSet;
use sacx_core::trajectory::{Trajectory, Transition};
use serde::{Deserialize, Serialize};

use crate::RuntimeError;

/// One scheduled stretch of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub task: usize,
    pub start: usize,
    pub len: usize,
    /// Mean per-step reward of `task` while it was executing.
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorEpisode {
    pub trajectory: Trajectory,
    pub trace: ScheduleTrace,
    pub segments: Vec<Segment>,
}

impl ActorEpisode {
    /// Undiscounted reward sum of every task.
    pub fn task_returns(&self) -> Vec<f64> {
        let k = self.trajectory.steps.first().map_or(0, |s| s.rewards.len());
        (0..k).map(|t| self.trajectory.steps.iter().map(|s| s.rewards[t]).sum()).collect()
    }

    /// Mean per-step reward of the episode's main task.
    pub fn main_return(&self) -> f64 {
        let n = self.trajectory.len().max(1) as f64;
        self.trajectory.steps.iter().map(|s| s.rewards[self.trace.main_task]).sum::<f64>() / n
    }
}

/// Runs one episode, switching intentions every scheduler period, and
/// updates the actor's scheduler table with the resulting schedule returns.
#[allow(clippy::too_many_arguments)]
pub fn actor_episode<R: Rng + ?Sized>(
    env: &mut dyn Environment,
    tasks: &TaskSet,
    policy: &GaussianPolicy,
    params: &ParamVector,
    scheduler: &mut Scheduler,
    actor: usize,
    episode: u64,
    env_seed: u64,
    gamma: f64,
    rng: &mut R,
) -> Result<ActorEpisode, RuntimeError> {
    let period = scheduler.config().period;
    let horizon = env.episode_length();
    let main = scheduler.begin_episode(rng);
    let mut obs = env.reset(env_seed);
    let mut steps = Vec::with_capacity(horizon);
    let mut chosen: Vec<usize> = Vec::new();
    let mut task = main;
    let mut terminal = false;
    for t in 0..horizon {
        if t % period == 0 {
            task = scheduler.choose_task(&chosen, main, episode, rng)?;
            chosen.push(task);
        }
        let out = policy.policy_forward(params, &obs, task)?;
        let action: Vec<f64> =
            out.mean.iter().zip(&out.std).map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal)).collect();
        let behavior_log_density = log_density(&out, &action);
        let step = env.step(&action, tasks)?;
        steps.push(Transition {
            observation: std::mem::replace(&mut obs, step.observation),
            action,
            rewards: step.rewards.0,
            behavior_task: task,
            behavior_log_density,
        });
        if step.done {
            terminal = true;
            break;
        }
    }
    let trajectory = Trajectory { steps, final_observation: obs, terminal, actor, episode };
    let returns = schedule_return(&trajectory, main, period, gamma)?;
    let trace = ScheduleTrace { main_task: main, tasks: chosen, returns };
    scheduler.update(&trace);

    let segments = trace
        .tasks
        .iter()
        .enumerate()
        .map(|(h, &task)| {
            let start = h * period;
            let end = ((h + 1) * period).min(trajectory.len());
            let len = end.saturating_sub(start);
            let total: f64 = trajectory.steps[start..end].iter().map(|s| s.rewards[task]).sum();
            Segment { task, start, len, mean_reward: if len > 0 { total / len as f64 } else { 0.0 } }
        })
        .collect();
    Ok(ActorEpisode { trajectory, trace, segments })
}

/// Runs `task`'s intention for a whole episode and returns its mean
/// per-step reward. Nothing is recorded for learning.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_episode<R: Rng + ?Sized>(
    env: &mut dyn Environment,
    tasks: &TaskSet,
    policy: &GaussianPolicy,
    params: &ParamVector,
    task: usize,
    env_seed: u64,
    deterministic: bool,
    rng: &mut R,
) -> Result<f64, RuntimeError> {
    let horizon = env.episode_length();
    let mut obs = env.reset(env_seed);
    let mut total = 0.0;
    let mut n = 0usize;
    for _ in 0..horizon {
        let out = policy.policy_forward(params, &obs, task)?;
        let action: Vec<f64> = if deterministic {
            out.mean.clone()
        } else {
            out.mean.iter().zip(&out.std).map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let step = env.step(&action, tasks)?;
        total += step.rewards.values()[task];
        n += 1;
        obs = step.observation;
        if step.done {
            break;
        }
    }
    Ok(total / n.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use sacx_core::env::{Tabletop, TabletopConfig};
    use sacx_core::nn::NetWidths;
    use sacx_core::scheduler::{ScheduleConfig, ScheduleMode};

    fn setup(mode: ScheduleMode) -> (Tabletop, TaskSet, GaussianPolicy, ParamVector, Scheduler) {
        let env = Tabletop::new(TabletopConfig::default()).unwrap();
        let tasks = TaskSet::stack_two_blocks();
        let widths = NetWidths { trunk: vec![16], head_hidden: vec![8], layer_norm: true };
        let policy = GaussianPolicy::new(env.observation_dim(), env.action_dim(), tasks.len(), &widths).unwrap();
        let params = policy.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let sched = Scheduler::new(ScheduleConfig { mode, ..Default::default() }, tasks.len(), vec![13]).unwrap();
        (env, tasks, policy, params, sched)
    }

    #[test]
    fn two_decisions_per_default_episode() {
        let (mut env, tasks, policy, params, mut sched) = setup(ScheduleMode::Uniform);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ep = actor_episode(&mut env, &tasks, &policy, &params, &mut sched, 0, 0, 5, 0.99, &mut rng).unwrap();
        assert_eq!(ep.trajectory.len(), 200);
        assert!(ep.trajectory.terminal);
        assert_eq!(ep.trace.tasks.len(), 2);
        assert_eq!(ep.trace.returns.len(), 2);
        assert_eq!(ep.segments.iter().map(|s| s.len).sum::<usize>(), 200);
        for (t, s) in ep.trajectory.steps.iter().enumerate() {
            assert_eq!(s.behavior_task, ep.trace.tasks[t / 100]);
            assert!(s.behavior_log_density.is_finite());
            assert_eq!(s.rewards.len(), 14);
        }
    }

    #[test]
    fn main_only_behaves_with_main_task() {
        let (mut env, tasks, policy, params, mut sched) = setup(ScheduleMode::MainOnly);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ep = actor_episode(&mut env, &tasks, &policy, &params, &mut sched, 0, 0, 5, 0.99, &mut rng).unwrap();
        assert!(ep.trajectory.steps.iter().all(|s| s.behavior_task == 13));
    }

    #[test]
    fn same_seeds_reproduce_the_episode() {
        let run = || {
            let (mut env, tasks, policy, params, mut sched) = setup(ScheduleMode::Learned);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            actor_episode(&mut env, &tasks, &policy, &params, &mut sched, 1, 4, 9, 0.99, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }
}
