//! Training runs in single-process or threaded mode.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread;
use std::time::Duration;

use crossbeam_channel::{bounded, select, Receiver, Sender};
use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sacx_core::env::Environment;
use sacx_core::learner::{Learner, LearnerOutput, Models};
use sacx_core::nn::ParamVector;
use sacx_core::scheduler::{EntrySummary, Scheduler};
use sacx_core::tasks::TaskSet;
use sacx_core::trajectory::Trajectory;
use serde::Serialize;

use crate::actor::{actor_episode, evaluate_episode, ActorEpisode};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::metrics::{write_trajectory, MetricRecord, MetricsSink};
use crate::replay::ReplayBuffer;
use crate::server::{GradientMessage, ParameterServer};
use crate::{derive_seed, RuntimeError};

const STREAM_INIT: u64 = 1;
const STREAM_ACTOR: u64 = 2;
const STREAM_LEARNER: u64 = 3;
const STREAM_EVAL: u64 = 4;
const STREAM_ENV: u64 = 1 << 32;

/// Observer verdict after each metrics record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalPoint {
    pub global_episode: u64,
    pub version: u64,
    pub task: usize,
    pub mean: f64,
}

/// `actor -> external task -> prefix -> candidate -> {mean, count}`.
pub type SchedulerSnapshot = BTreeMap<String, BTreeMap<String, BTreeMap<String, BTreeMap<String, EntrySummary>>>>;

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub mode: String,
    pub tasks: Vec<String>,
    pub episodes: u64,
    pub updates: u64,
    pub rejected_gradients: u64,
    pub stopped_early: bool,
    /// Mean per-step main-task reward of each training episode, in arrival order.
    pub main_returns: Vec<f64>,
    /// Mean per-step reward of every task per training episode (`task -> episode`).
    pub task_reward_curves: Vec<Vec<f64>>,
    pub eval: Vec<EvalPoint>,
    pub scheduler: SchedulerSnapshot,
    pub checkpoints: Vec<PathBuf>,
    #[serde(skip)]
    pub final_policy: Option<ParamVector>,
    #[serde(skip)]
    pub final_critic: Option<ParamVector>,
}

pub fn run_training(config: &RunConfig, out: Option<&Path>) -> Result<RunReport, RuntimeError> {
    run_training_with(config, out, &mut |_| Control::Continue)
}

/// Runs training and hands every metrics record to `observer`, which may
/// end the run early.
pub fn run_training_with(
    config: &RunConfig,
    out: Option<&Path>,
    observer: &mut dyn FnMut(&MetricRecord) -> Control,
) -> Result<RunReport, RuntimeError> {
    config.validate()?;
    let setup = Setup::new(config)?;
    let mut run = RunState::new(config, &setup, out)?;
    let start = MetricRecord::Run {
        seed: config.runtime.seed,
        mode: config.scheduler.mode.to_string(),
        tasks: setup.names.clone(),
        actors: config.runtime.actors,
        episode_length: config.env.episode_length(),
    };
    run.emit(&start, observer)?;
    let server = ParameterServer::new(
        setup.policy0.clone(),
        setup.critic0.clone(),
        config.learner.policy_adam,
        config.learner.critic_adam,
        config.runtime.gradients_to_average,
    );
    let server = if config.runtime.single_process {
        run_single(config, &setup, &mut run, server, observer)?
    } else {
        run_threaded(config, &setup, &mut run, server, observer)?
    };
    run.finish(config, &setup, server)
}

struct Setup {
    tasks: TaskSet,
    names: Vec<String>,
    models: Models,
    externals: Vec<usize>,
    policy0: ParamVector,
    critic0: ParamVector,
}

impl Setup {
    fn new(config: &RunConfig) -> Result<Self, RuntimeError> {
        let tasks = config.task_set()?;
        let env = config.build_env()?;
        let models = config.models(env.as_ref(), &tasks)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.runtime.seed, STREAM_INIT, 0));
        let policy0 = models.policy.init_params(&mut rng);
        let critic0 = models.critic.init_params(&mut rng);
        let externals = tasks.external().iter().map(|t| t.id.index).collect();
        Ok(Self { names: tasks.names(), tasks, models, externals, policy0, critic0 })
    }

    fn scheduler(&self, config: &RunConfig) -> Result<Scheduler, RuntimeError> {
        Ok(Scheduler::new(config.scheduler.clone(), self.tasks.len(), self.externals.clone())?)
    }
}

/// Bookkeeping shared by both modes: outputs, report curves, evaluation.
struct RunState {
    dir: Option<PathBuf>,
    metrics: MetricsSink,
    dumps: Option<BufWriter<File>>,
    episodes: u64,
    main_returns: Vec<f64>,
    task_curves: Vec<Vec<f64>>,
    eval: Vec<EvalPoint>,
    checkpoints: Vec<PathBuf>,
    eval_env: Box<dyn Environment>,
    eval_rng: ChaCha8Rng,
    evals_run: u64,
    mirrors: Vec<Scheduler>,
    stopped: bool,
}

impl RunState {
    fn new(config: &RunConfig, setup: &Setup, out: Option<&Path>) -> Result<Self, RuntimeError> {
        let (metrics, dumps) = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("config.toml"), config.to_toml_string()?)?;
                let dumps = if config.output.dump_trajectories {
                    Some(BufWriter::new(File::create(dir.join("trajectories.jsonl"))?))
                } else {
                    None
                };
                (MetricsSink::create(&dir.join("metrics.jsonl"))?, dumps)
            }
            None => (MetricsSink::discard(), None),
        };
        let mirrors = (0..config.runtime.actors).map(|_| setup.scheduler(config)).collect::<Result<_, _>>()?;
        Ok(Self {
            dir: out.map(Path::to_path_buf),
            metrics,
            dumps,
            episodes: 0,
            main_returns: Vec::new(),
            task_curves: vec![Vec::new(); setup.tasks.len()],
            eval: Vec::new(),
            checkpoints: Vec::new(),
            eval_env: config.build_env()?,
            eval_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.runtime.seed, STREAM_EVAL, u64::MAX)),
            evals_run: 0,
            mirrors,
            stopped: false,
        })
    }

    fn emit(
        &mut self,
        record: &MetricRecord,
        observer: &mut dyn FnMut(&MetricRecord) -> Control,
    ) -> Result<(), RuntimeError> {
        self.metrics.record(record)?;
        if observer(record) == Control::Stop {
            self.stopped = true;
        }
        Ok(())
    }

    /// Records a finished actor episode, then runs evaluation and
    /// checkpointing when due.
    #[allow(clippy::too_many_arguments)]
    fn on_episode(
        &mut self,
        config: &RunConfig,
        setup: &Setup,
        ep: &ActorEpisode,
        version: u64,
        policy: &ParamVector,
        critic: &ParamVector,
        observer: &mut dyn FnMut(&MetricRecord) -> Control,
    ) -> Result<(), RuntimeError> {
        self.episodes += 1;
        let horizon = ep.trajectory.len().max(1) as f64;
        let task_returns = ep.task_returns();
        for (curve, r) in self.task_curves.iter_mut().zip(&task_returns) {
            curve.push(r / horizon);
        }
        self.main_returns.push(ep.main_return());
        if let Some(d) = &mut self.dumps {
            write_trajectory(d, &ep.trajectory)?;
        }
        let actor = ep.trajectory.actor;
        if let Some(m) = self.mirrors.get_mut(actor) {
            m.update(&ep.trace);
        }
        let record = MetricRecord::Episode {
            actor,
            episode: ep.trajectory.episode,
            global_episode: self.episodes,
            version,
            main_task: ep.trace.main_task,
            schedule: ep.trace.tasks.clone(),
            segments: ep.segments.clone(),
            task_returns,
            main_return: ep.main_return(),
        };
        self.emit(&record, observer)?;

        let ev = &config.evaluation;
        if ev.every > 0 && self.episodes % ev.every == 0 {
            for &task in &setup.externals {
                let mut returns = Vec::with_capacity(ev.episodes);
                for _ in 0..ev.episodes {
                    let seed = derive_seed(config.runtime.seed, STREAM_EVAL, self.evals_run);
                    self.evals_run += 1;
                    returns.push(evaluate_episode(
                        self.eval_env.as_mut(),
                        &setup.tasks,
                        &setup.models.policy,
                        policy,
                        task,
                        seed,
                        ev.deterministic,
                        &mut self.eval_rng,
                    )?);
                }
                let mean = returns.iter().sum::<f64>() / returns.len() as f64;
                self.eval.push(EvalPoint { global_episode: self.episodes, version, task, mean });
                let record = MetricRecord::Eval { global_episode: self.episodes, version, task, returns, mean };
                self.emit(&record, observer)?;
            }
        }
        let every = config.output.checkpoint_every;
        if every > 0 && self.episodes % every == 0 {
            self.checkpoint(config, setup, version, policy, critic, &format!("{:08}", self.episodes))?;
        }
        Ok(())
    }

    fn checkpoint(
        &mut self,
        config: &RunConfig,
        setup: &Setup,
        version: u64,
        policy: &ParamVector,
        critic: &ParamVector,
        tag: &str,
    ) -> Result<(), RuntimeError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(format!("checkpoint_{tag}.bin"));
        Checkpoint { config: config.clone(), version, policy: policy.clone(), critic: critic.clone() }.save(&path)?;
        let sched = serde_json::to_string_pretty(&scheduler_snapshot_of(&self.mirrors, setup))?;
        std::fs::write(dir.join(format!("scheduler_{tag}.json")), sched)?;
        self.checkpoints.push(path);
        Ok(())
    }

    fn learner_record(
        &mut self,
        config: &RunConfig,
        learner: usize,
        version: u64,
        out: &LearnerOutput,
        observer: &mut dyn FnMut(&MetricRecord) -> Control,
    ) -> Result<(), RuntimeError> {
        let every = config.output.learner_metrics_every;
        if every > 0 && out.metrics.step % every == 0 {
            let record = MetricRecord::learner(out.metrics.step, learner, version, &out.metrics);
            self.emit(&record, observer)?;
        }
        Ok(())
    }

    fn finish(mut self, config: &RunConfig, setup: &Setup, server: ParameterServer) -> Result<RunReport, RuntimeError> {
        self.checkpoint(config, setup, server.version(), server.policy(), server.critic(), "final")?;
        self.metrics.flush()?;
        if let Some(d) = &mut self.dumps {
            d.flush()?;
        }
        let report = RunReport {
            seed: config.runtime.seed,
            mode: config.scheduler.mode.to_string(),
            tasks: setup.names.clone(),
            episodes: self.episodes,
            updates: server.version(),
            rejected_gradients: server.rejected(),
            stopped_early: self.stopped,
            main_returns: self.main_returns,
            task_reward_curves: self.task_curves,
            eval: self.eval,
            scheduler: scheduler_snapshot_of(&self.mirrors, setup),
            checkpoints: self.checkpoints,
            final_policy: Some(server.policy().clone()),
            final_critic: Some(server.critic().clone()),
        };
        if let Some(dir) = &self.dir {
            std::fs::write(dir.join("scheduler.json"), serde_json::to_string_pretty(&report.scheduler)?)?;
            std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        }
        Ok(report)
    }
}

fn scheduler_snapshot_of(mirrors: &[Scheduler], setup: &Setup) -> SchedulerSnapshot {
    mirrors
        .iter()
        .enumerate()
        .map(|(a, s)| {
            let per_external = setup
                .externals
                .iter()
                .filter_map(|&e| s.table(e).map(|t| (setup.names[e].clone(), t.snapshot(&setup.names))))
                .collect();
            (a.to_string(), per_external)
        })
        .collect()
}

fn env_seed(config: &RunConfig, actor: usize, episode: u64) -> u64 {
    derive_seed(config.runtime.seed, STREAM_ENV + actor as u64, episode)
}

fn learners(config: &RunConfig, setup: &Setup, count: usize) -> Result<Vec<Learner>, RuntimeError> {
    (0..count)
        .map(|l| {
            let seed = derive_seed(config.runtime.seed, STREAM_LEARNER, l as u64);
            Ok(Learner::new(setup.models.clone(), config.learner.clone(), &setup.policy0, &setup.critic0, seed)?)
        })
        .collect()
}

/// Round robin: each actor episode is followed by `updates_per_episode`
/// parameter updates, each averaging one gradient from each of `G` learners.
fn run_single(
    config: &RunConfig,
    setup: &Setup,
    run: &mut RunState,
    mut server: ParameterServer,
    observer: &mut dyn FnMut(&MetricRecord) -> Control,
) -> Result<ParameterServer, RuntimeError> {
    let rt = &config.runtime;
    let mut envs: Vec<Box<dyn Environment>> = (0..rt.actors).map(|_| config.build_env()).collect::<Result<_, _>>()?;
    let mut schedulers: Vec<Scheduler> = (0..rt.actors).map(|_| setup.scheduler(config)).collect::<Result<_, _>>()?;
    let mut rngs: Vec<ChaCha8Rng> =
        (0..rt.actors).map(|a| ChaCha8Rng::seed_from_u64(derive_seed(rt.seed, STREAM_ACTOR, a as u64))).collect();
    let mut learners = learners(config, setup, rt.gradients_to_average)?;
    let mut replay = ReplayBuffer::new(rt.replay_capacity);
    let cap_reached = |s: &ParameterServer| rt.max_updates.is_some_and(|m| s.version() >= m);

    'rounds: for episode in 0..rt.episodes_per_actor {
        for a in 0..rt.actors {
            let ep = actor_episode(
                envs[a].as_mut(),
                &setup.tasks,
                &setup.models.policy,
                server.policy(),
                &mut schedulers[a],
                a,
                episode,
                env_seed(config, a, episode),
                config.learner.gamma,
                &mut rngs[a],
            )?;
            let version = server.version();
            run.on_episode(config, setup, &ep, version, server.policy(), server.critic(), observer)?;
            replay.append(Arc::new(ep.trajectory))?;
            if run.stopped {
                break 'rounds;
            }
            if replay.len() < rt.min_replay {
                continue;
            }
            for _ in 0..rt.updates_per_episode {
                if cap_reached(&server) {
                    break 'rounds;
                }
                let refs: Vec<&Trajectory> = replay.iter().collect();
                let mut batch = Vec::with_capacity(learners.len());
                for (l, learner) in learners.iter_mut().enumerate() {
                    let out =
                        learner.learner_step(&refs, server.policy(), server.critic())?.expect("replay is non-empty");
                    run.learner_record(config, l, server.version(), &out, observer)?;
                    batch.push(GradientMessage {
                        learner: l,
                        version: server.version(),
                        policy: out.policy_gradient,
                        critic: out.critic_gradient,
                    });
                }
                for m in batch {
                    server.submit(m);
                }
                if run.stopped {
                    break 'rounds;
                }
            }
        }
    }
    Ok(server)
}

/// Latest parameters as seen by actors and learners.
#[derive(Debug)]
pub struct Published {
    pub version: u64,
    pub policy: ParamVector,
    pub critic: ParamVector,
}

/// Parameter publication point with a version barrier.
#[derive(Debug)]
pub struct ParamStore {
    latest: Mutex<Arc<Published>>,
    changed: Condvar,
    stop: AtomicBool,
}

impl ParamStore {
    pub fn new(version: u64, policy: ParamVector, critic: ParamVector) -> Self {
        Self {
            latest: Mutex::new(Arc::new(Published { version, policy, critic })),
            changed: Condvar::new(),
            stop: AtomicBool::new(false),
        }
    }

    pub fn latest(&self) -> Arc<Published> {
        self.latest.lock().expect("param store poisoned").clone()
    }

    /// Publishes a strictly newer version; older ones are ignored.
    pub fn publish(&self, version: u64, policy: ParamVector, critic: ParamVector) {
        let mut guard = self.latest.lock().expect("param store poisoned");
        if version > guard.version {
            *guard = Arc::new(Published { version, policy, critic });
        }
        self.changed.notify_all();
    }

    /// Blocks until a version newer than `seen` is published or the run stops.
    pub fn wait_newer(&self, seen: u64) -> Option<Arc<Published>> {
        let mut guard = self.latest.lock().expect("param store poisoned");
        loop {
            if self.stopped() {
                return None;
            }
            if guard.version > seen {
                return Some(guard.clone());
            }
            guard = self.changed.wait_timeout(guard, Duration::from_millis(50)).expect("param store poisoned").0;
        }
    }

    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
        let _guard = self.latest.lock().expect("param store poisoned");
        self.changed.notify_all();
    }

    pub fn stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }
}

struct EpisodeMessage {
    version: u64,
    episode: ActorEpisode,
}

struct LearnerMessage {
    gradient: GradientMessage,
    output_metrics: LearnerOutput,
}

/// Applies `message` on the server and publishes the new version if it
/// completed a set.
pub fn serve_gradient(server: &mut ParameterServer, store: &ParamStore, message: GradientMessage) -> Option<u64> {
    let v = server.submit(message)?;
    store.publish(v, server.policy().clone(), server.critic().clone());
    Some(v)
}

/// Learner worker loop: compute against the latest parameters, send, then
/// wait for the next published version.
fn learner_worker(
    id: usize,
    mut learner: Learner,
    store: Arc<ParamStore>,
    replay: Arc<RwLock<ReplayBuffer>>,
    min_replay: usize,
    tx: Sender<LearnerMessage>,
) -> Result<(), RuntimeError> {
    let mut current = store.latest();
    while !store.stopped() {
        let snapshot = replay.read().expect("replay poisoned").snapshot();
        if snapshot.len() < min_replay.max(1) {
            thread::sleep(Duration::from_millis(2));
            continue;
        }
        let refs: Vec<&Trajectory> = snapshot.iter().map(|t| t.as_ref()).collect();
        let Some(out) = learner.learner_step(&refs, &current.policy, &current.critic)? else { continue };
        let gradient = GradientMessage {
            learner: id,
            version: current.version,
            policy: out.policy_gradient.clone(),
            critic: out.critic_gradient.clone(),
        };
        if tx.send(LearnerMessage { gradient, output_metrics: out }).is_err() {
            break;
        }
        match store.wait_newer(current.version) {
            Some(p) => current = p,
            None => break,
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn actor_worker(
    actor: usize,
    config: RunConfig,
    tasks: TaskSet,
    models: Models,
    mut scheduler: Scheduler,
    store: Arc<ParamStore>,
    tx: Sender<EpisodeMessage>,
) -> Result<(), RuntimeError> {
    let mut env = config.build_env()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.runtime.seed, STREAM_ACTOR, actor as u64));
    for episode in 0..config.runtime.episodes_per_actor {
        if store.stopped() {
            break;
        }
        // Fetch before every episode.
        let params = store.latest();
        let ep = actor_episode(
            env.as_mut(),
            &tasks,
            &models.policy,
            &params.policy,
            &mut scheduler,
            actor,
            episode,
            env_seed(&config, actor, episode),
            config.learner.gamma,
            &mut rng,
        )?;
        if tx.send(EpisodeMessage { version: params.version, episode: ep }).is_err() {
            break;
        }
    }
    Ok(())
}

fn run_threaded(
    config: &RunConfig,
    setup: &Setup,
    run: &mut RunState,
    mut server: ParameterServer,
    observer: &mut dyn FnMut(&MetricRecord) -> Control,
) -> Result<ParameterServer, RuntimeError> {
    let rt = &config.runtime;
    let store = Arc::new(ParamStore::new(0, setup.policy0.clone(), setup.critic0.clone()));
    let replay = Arc::new(RwLock::new(ReplayBuffer::new(rt.replay_capacity)));
    let (ep_tx, ep_rx) = bounded::<EpisodeMessage>(rt.queue_capacity);
    let (grad_tx, grad_rx) = bounded::<LearnerMessage>(rt.queue_capacity);
    let (err_tx, err_rx) = bounded::<String>(rt.actors + rt.learners);

    let mut handles = Vec::new();
    for a in 0..rt.actors {
        let (cfg, tasks, models) = (config.clone(), setup.tasks.clone(), setup.models.clone());
        let scheduler = setup.scheduler(config)?;
        let (store, tx, err) = (store.clone(), ep_tx.clone(), err_tx.clone());
        handles.push(thread::Builder::new().name(format!("actor-{a}")).spawn(move || {
            if let Err(e) = actor_worker(a, cfg, tasks, models, scheduler, store, tx) {
                let _ = err.send(format!("actor {a}: {e}"));
            }
        })?);
    }
    for (l, learner) in learners(config, setup, rt.learners)?.into_iter().enumerate() {
        let (store, replay, tx, err) = (store.clone(), replay.clone(), grad_tx.clone(), err_tx.clone());
        let min_replay = rt.min_replay;
        handles.push(thread::Builder::new().name(format!("learner-{l}")).spawn(move || {
            if let Err(e) = learner_worker(l, learner, store, replay, min_replay, tx) {
                let _ = err.send(format!("learner {l}: {e}"));
            }
        })?);
    }
    drop((ep_tx, grad_tx, err_tx));

    let total = rt.episodes_per_actor * rt.actors as u64;
    let mut failure = None;
    let result: Result<(), RuntimeError> = (|| {
        while run.episodes < total && !run.stopped {
            if rt.max_updates.is_some_and(|m| server.version() >= m) {
                break;
            }
            select! {
                recv(ep_rx) -> msg => {
                    let Ok(msg) = msg else { break };
                    let latest = store.latest();
                    run.on_episode(config, setup, &msg.episode, msg.version, &latest.policy, &latest.critic, observer)?;
                    replay.write().expect("replay poisoned").append(Arc::new(msg.episode.trajectory))?;
                }
                recv(grad_rx) -> msg => {
                    let Ok(msg) = msg else { continue };
                    let learner = msg.gradient.learner;
                    let version = msg.gradient.version;
                    run.learner_record(config, learner, version, &msg.output_metrics, observer)?;
                    if let Some(v) = serve_gradient(&mut server, &store, msg.gradient) {
                                debug!("published parameter version {v}");
                    }
                }
                recv(err_rx) -> msg => {
                    if let Ok(msg) = msg {
                        failure = Some(msg);
                        break;
                    }
                }
            }
        }
        Ok(())
    })();
    store.stop();
    drop(ep_rx);
    drop(grad_rx);
    let mut panicked = Vec::new();
    for h in handles {
        let name = h.thread().name().unwrap_or("worker").to_string();
        if h.join().is_err() {
            panicked.push(name);
        }
    }
    result?;
    if let Some(msg) = failure.or_else(|| err_rx.try_recv().ok()) {
        return Err(RuntimeError::Worker(msg));
    }
    if !panicked.is_empty() {
        return Err(RuntimeError::Worker(format!("panicked: {}", panicked.join(", "))));
    }
    info!("threaded run finished: {} episodes, {} updates", run.episodes, server.version());
    Ok(server)
}

/// Feeds scripted gradients through learner threads and the threaded
/// server path; learner `l` sends `scripts[l][k]` once version `k` is
/// published. Returns the server after all scripts are consumed.
pub fn run_scripted_distributed(
    mut server: ParameterServer,
    scripts: Vec<Vec<(ParamVector, ParamVector)>>,
) -> Result<ParameterServer, RuntimeError> {
    let store = Arc::new(ParamStore::new(server.version(), server.policy().clone(), server.critic().clone()));
    let (tx, rx): (Sender<GradientMessage>, Receiver<GradientMessage>) = bounded(scripts.len().max(1));
    let total: usize = scripts.iter().map(Vec::len).sum();
    let mut handles = Vec::new();
    for (l, script) in scripts.into_iter().enumerate() {
        let (store, tx) = (store.clone(), tx.clone());
        handles.push(thread::spawn(move || {
            let mut seen = store.latest().version;
            for (k, (policy, critic)) in script.into_iter().enumerate() {
                if k > 0 {
                    match store.wait_newer(seen) {
                        Some(p) => seen = p.version,
                        None => return,
                    }
                }
                if tx.send(GradientMessage { learner: l, version: seen, policy, critic }).is_err() {
                    return;
                }
            }
        }));
    }
    drop(tx);
    for _ in 0..total {
        let Ok(msg) = rx.recv() else { break };
        serve_gradient(&mut server, &store, msg);
    }
    store.stop();
    for h in handles {
        h.join().map_err(|_| RuntimeError::Worker("scripted learner panicked".into()))?;
    }
    Ok(server)
}
