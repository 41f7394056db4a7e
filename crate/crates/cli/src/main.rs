use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sacx_cli::experiment::{moving_average, run_experiment, ExperimentSpec};
use sacx_cli::presets;
use sacx_runtime::metrics::read_metrics;
use sacx_runtime::{evaluate_episode, run_training, Checkpoint, MetricRecord, RunConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "sacx", about = "Scheduled auxiliary control: training, evaluation and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML run config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        single_process: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll out one intention of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Sample actions instead of acting with the mean.
        #[arg(long)]
        stochastic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Turn a metrics stream into curve data.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        /// `.csv` writes a table; `.json` writes series for plotting tools.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        window: usize,
    },
    /// Run a multi-seed experiment spec.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a canned experiment spec to edit or run.
    Preset {
        #[arg(value_enum)]
        name: Preset,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Stack,
    Distractors,
    Chain,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config, seed, single_process, out } => train(config, seed, single_process, out),
        Command::Eval { checkpoint, task, episodes, stochastic, seed } => {
            eval(checkpoint, &task, episodes, stochastic, seed)
        }
        Command::Plot { metrics, out, window } => plot(metrics, out, window),
        Command::Experiment { spec, out } => {
            let spec = ExperimentSpec::load(&spec).with_context(|| format!("loading {}", spec.display()))?;
            let result = run_experiment(&spec, Some(&out), &mut |_| {})?;
            println!("{}", serde_json::to_string_pretty(&result.report)?);
            Ok(())
        }
        Command::Preset { name, out } => {
            let spec = match name {
                Preset::Stack => presets::stack_experiment(),
                Preset::Distractors => presets::distractor_experiment(),
                Preset::Chain => presets::chain_experiment(),
            };
            std::fs::write(&out, spec.to_toml_string()?)?;
            Ok(())
        }
    }
}

fn train(config: Option<PathBuf>, seed: Option<u64>, single_process: bool, out: Option<PathBuf>) -> Result<()> {
    let mut c = match &config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        c.runtime.seed = s;
    }
    c.runtime.single_process |= single_process;
    let report = run_training(&c, out.as_deref())?;
    let last = report.eval.last().map(|e| e.mean);
    println!(
        "{} episodes, {} updates, {} rejected gradients, last eval {:?}",
        report.episodes, report.updates, report.rejected_gradients, last
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    task: String,
    returns: Vec<f64>,
    mean: f64,
}

fn eval(checkpoint: PathBuf, task: &str, episodes: usize, stochastic: bool, seed: u64) -> Result<()> {
    let ck = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let tasks = ck.config.task_set()?;
    let index = tasks.find(task)?.index;
    let mut env = ck.config.build_env()?;
    let models = ck.config.models(env.as_ref(), &tasks)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let returns = (0..episodes)
        .map(|e| {
            evaluate_episode(
                env.as_mut(),
                &tasks,
                &models.policy,
                &ck.policy,
                index,
                seed + e as u64,
                !stochastic,
                &mut rng,
            )
        })
        .collect::<Result<Vec<f64>, _>>()?;
    if returns.is_empty() {
        bail!("need at least one episode");
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    println!("{}", serde_json::to_string_pretty(&EvalSummary { task: task.to_string(), returns, mean })?);
    Ok(())
}

#[derive(Serialize)]
struct Series {
    name: String,
    episode: Vec<u64>,
    value: Vec<f64>,
    moving_average: Vec<f64>,
}

fn plot(metrics: PathBuf, out: PathBuf, window: usize) -> Result<()> {
    let records = read_metrics(&metrics)?;
    let names = records
        .iter()
        .find_map(|r| match r {
            MetricRecord::Run { tasks, .. } => Some(tasks.clone()),
            _ => None,
        })
        .context("metrics stream has no run record")?;
    let mut train = Series { name: "train/main".into(), episode: vec![], value: vec![], moving_average: vec![] };
    let mut evals: Vec<Series> = Vec::new();
    for r in &records {
        match r {
            MetricRecord::Episode { global_episode, main_return, .. } => {
                train.episode.push(*global_episode);
                train.value.push(*main_return);
            }
            MetricRecord::Eval { global_episode, task, mean, .. } => {
                let name = format!("eval/{}", names.get(*task).map_or("?", String::as_str));
                let pos = match evals.iter().position(|s| s.name == name) {
                    Some(p) => p,
                    None => {
                        evals.push(Series { name, episode: vec![], value: vec![], moving_average: vec![] });
                        evals.len() - 1
                    }
                };
                evals[pos].episode.push(*global_episode);
                evals[pos].value.push(*mean);
            }
            _ => {}
        }
    }
    let mut series = vec![train];
    series.extend(evals);
    for s in &mut series {
        s.moving_average = moving_average(&s.value, window);
    }
    let is_json = out.extension().is_some_and(|e| e == "json");
    let text = if is_json {
        serde_json::to_string_pretty(&series)?
    } else {
        let mut t = String::from("series,episode,value,moving_average\n");
        for s in &series {
            for ((e, v), m) in s.episode.iter().zip(&s.value).zip(&s.moving_average) {
                t.push_str(&format!("{},{e},{v},{m}\n", s.name));
            }
        }
        t
    };
    std::fs::write(&out, text)?;
    Ok(())
}
