//! Multi-seed experiments, quantile bands and mode comparisons.
//!
//! Quantiles use the nearest-rank rule on sorted values: the `p` quantile of
//! `n` values is the element at 1-based rank `max(1, ceil(p * n))`. Moving
//! averages are trailing means over the last `window` curve points; points
//! before the first full window average what is available, but
//! episodes-to-threshold only counts full windows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use sacx_core::scheduler::ScheduleMode;
use sacx_runtime::{run_training_with, Control, MetricRecord, RunConfig};
use serde::{Deserialize, Serialize};

use crate::ExperimentError;

fn default_window() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub modes: Vec<ScheduleMode>,
    pub seeds: Vec<u64>,
    /// Training episodes per run, summed over actors.
    pub episodes: u64,
    /// Moving-average main-task return that counts as solved.
    pub threshold: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    /// End a run as soon as its moving average reaches the threshold.
    #[serde(default)]
    pub stop_at_threshold: bool,
    #[serde(default)]
    pub base: RunConfig,
}

impl ExperimentSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, ExperimentError> {
        let spec: Self = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String, ExperimentError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Invalid(m.to_string()));
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.modes.is_empty() {
            return bad("at least one scheduler mode is required");
        }
        if self.window == 0 || self.episodes == 0 {
            return bad("window and episode budget must be positive");
        }
        self.base.validate()?;
        if self.base.evaluation.every == 0 {
            return bad("experiments need periodic evaluation (evaluation.every > 0)");
        }
        Ok(())
    }

    /// Run configuration for one `(mode, seed)` cell.
    pub fn config_for(&self, mode: ScheduleMode, seed: u64) -> RunConfig {
        let mut c = self.base.clone();
        c.scheduler.mode = mode;
        c.runtime.seed = seed;
        c.runtime.episodes_per_actor = self.episodes.div_ceil(c.runtime.actors as u64);
        c
    }
}

/// Main-task evaluation curve of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCurve {
    pub mode: String,
    pub seed: u64,
    /// Global training episode of each evaluation point.
    pub episodes: Vec<u64>,
    pub returns: Vec<f64>,
    pub moving_average: Vec<f64>,
    pub episodes_to_threshold: Option<u64>,
    pub episodes_run: u64,
    pub wall_seconds: f64,
    pub error: Option<String>,
}

impl RunCurve {
    pub fn from_points(
        mode: &str,
        seed: u64,
        episodes: Vec<u64>,
        returns: Vec<f64>,
        window: usize,
        threshold: f64,
    ) -> Self {
        let moving_average = moving_average(&returns, window);
        let episodes_to_threshold = episodes_to_threshold(&episodes, &returns, window, threshold);
        Self {
            mode: mode.to_string(),
            seed,
            episodes_run: episodes.last().copied().unwrap_or(0),
            episodes,
            returns,
            moving_average,
            episodes_to_threshold,
            wall_seconds: 0.0,
            error: None,
        }
    }

    pub fn max_moving_average(&self) -> f64 {
        self.moving_average.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Trailing mean over the last `window` values (fewer at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        // Re-sum periodically to keep the running sum from drifting.
        if i % 4096 == 4095 {
            sum = values[(i + 1).saturating_sub(window)..=i].iter().sum();
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// First episode at which a full-window moving average reaches `threshold`.
pub fn episodes_to_threshold(episodes: &[u64], returns: &[f64], window: usize, threshold: f64) -> Option<u64> {
    let window = window.max(1);
    let ma = moving_average(returns, window);
    (window - 1..ma.len()).find(|&i| ma[i] >= threshold).map(|i| episodes[i])
}

/// Nearest-rank quantile of already sorted values.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty set");
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub episode: u64,
    pub runs: usize,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
}

/// Per-episode median and 5%/95% quantiles over every curve that has a point
/// at that episode.
pub fn bands(curves: &[(&[u64], &[f64])]) -> Vec<Band> {
    let mut at: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (episodes, values) in curves {
        for (e, v) in episodes.iter().zip(values.iter()) {
            at.entry(*e).or_default().push(*v);
        }
    }
    at.into_iter()
        .map(|(episode, mut v)| {
            v.sort_by(f64::total_cmp);
            Band {
                episode,
                runs: v.len(),
                median: nearest_rank(&v, 0.5),
                q05: nearest_rank(&v, 0.05),
                q95: nearest_rank(&v, 0.95),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub mode: String,
    pub returns: Vec<Band>,
    pub moving_average: Vec<Band>,
}

pub fn aggregate(curves: &[RunCurve]) -> Vec<ModeAggregate> {
    let mut modes: Vec<&str> = curves.iter().map(|c| c.mode.as_str()).collect();
    modes.dedup();
    let mut seen = Vec::new();
    for m in modes {
        if !seen.contains(&m) {
            seen.push(m);
        }
    }
    seen.into_iter()
        .map(|mode| {
            let ok: Vec<&RunCurve> = curves.iter().filter(|c| c.mode == mode && c.error.is_none()).collect();
            let raw: Vec<(&[u64], &[f64])> = ok.iter().map(|c| (&c.episodes[..], &c.returns[..])).collect();
            let ma: Vec<(&[u64], &[f64])> = ok.iter().map(|c| (&c.episodes[..], &c.moving_average[..])).collect();
            ModeAggregate { mode: mode.to_string(), returns: bands(&raw), moving_average: bands(&ma) }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    /// `None` means the threshold was never reached (infinite).
    pub episodes_to_threshold: BTreeMap<u64, Option<u64>>,
    /// Nearest-rank median over seeds, with unreached runs ranked last.
    pub median_episodes_to_threshold: Option<u64>,
    /// Median over seeds of each run's final moving average.
    pub final_moving_average: f64,
    /// Median over seeds of each run's highest moving average.
    pub peak_moving_average: f64,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModesReport {
    pub threshold: f64,
    pub window: usize,
    pub modes: BTreeMap<String, ModeSummary>,
    /// Modes grouped by median episodes-to-threshold, fastest first; modes
    /// in one group are tied.
    pub ranking: Vec<Vec<String>>,
}

fn median_option(values: &[Option<u64>]) -> Option<u64> {
    let mut v: Vec<f64> = values.iter().map(|x| x.map_or(f64::INFINITY, |e| e as f64)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = nearest_rank(&v, 0.5);
    m.is_finite().then_some(m as u64)
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    nearest_rank(&v, 0.5)
}

pub fn compare_modes(curves: &[RunCurve], window: usize, threshold: f64) -> ModesReport {
    let mut modes = BTreeMap::new();
    for agg in aggregate(curves) {
        let all: Vec<&RunCurve> = curves.iter().filter(|c| c.mode == agg.mode).collect();
        let ok: Vec<&RunCurve> = all.iter().copied().filter(|c| c.error.is_none()).collect();
        let ett: BTreeMap<u64, Option<u64>> = ok.iter().map(|c| (c.seed, c.episodes_to_threshold)).collect();
        let finals: Vec<f64> = ok.iter().filter_map(|c| c.moving_average.last().copied()).collect();
        let peaks: Vec<f64> = ok.iter().filter(|c| !c.returns.is_empty()).map(|c| c.max_moving_average()).collect();
        modes.insert(
            agg.mode.clone(),
            ModeSummary {
                median_episodes_to_threshold: median_option(&ett.values().copied().collect::<Vec<_>>()),
                episodes_to_threshold: ett,
                final_moving_average: median(&finals),
                peak_moving_average: median(&peaks),
                failed_runs: all.len() - ok.len(),
            },
        );
    }
    let mut order: Vec<(Option<u64>, String)> =
        modes.iter().map(|(m, s)| (s.median_episodes_to_threshold, m.clone())).collect();
    order.sort_by_key(|(e, m)| (e.is_none(), *e, m.clone()));
    let mut ranking: Vec<Vec<String>> = Vec::new();
    let mut last: Option<Option<u64>> = None;
    for (e, m) in order {
        match ranking.last_mut() {
            Some(group) if last == Some(e) => group.push(m),
            _ => ranking.push(vec![m]),
        }
        last = Some(e);
    }
    ModesReport { threshold, window, modes, ranking }
}

/// Episode-by-task table of the mean per-step reward of each task while it
/// was the executing intention. Cells for tasks that did not run in an
/// episode hold NaN (written as `NaN` in CSV).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardMatrix {
    pub tasks: Vec<String>,
    /// `(global episode, per-task cells)`.
    pub rows: Vec<(u64, Vec<f64>)>,
}

impl RewardMatrix {
    /// Adds the row for an episode record; other records are ignored.
    pub fn push(&mut self, record: &MetricRecord) {
        match record {
            MetricRecord::Run { tasks, .. } => self.tasks = tasks.clone(),
            MetricRecord::Episode { global_episode, segments, task_returns, .. } => {
                let k = if self.tasks.is_empty() { task_returns.len() } else { self.tasks.len() };
                let mut sum = vec![0.0; k];
                let mut steps = vec![0usize; k];
                for s in segments.iter().filter(|s| s.task < k) {
                    sum[s.task] += s.mean_reward * s.len as f64;
                    steps[s.task] += s.len;
                }
                let row = sum.iter().zip(&steps).map(|(s, &n)| if n > 0 { s / n as f64 } else { f64::NAN }).collect();
                self.rows.push((*global_episode, row));
            }
            _ => {}
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode");
        for t in &self.tasks {
            let _ = write!(out, ",{t:?}");
        }
        out.push('\n');
        for (e, row) in &self.rows {
            let _ = write!(out, "{e}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Builds the reward matrix of one run from its metrics stream.
pub fn emit_reward_matrix(records: &[MetricRecord]) -> RewardMatrix {
    let mut m = RewardMatrix::default();
    for r in records {
        m.push(r);
    }
    m
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub name: String,
    pub runs: Vec<RunCurve>,
    pub aggregates: Vec<ModeAggregate>,
    pub report: ModesReport,
    /// Reward matrix of every run, keyed by `(mode, seed)`.
    pub reward_matrices: Vec<((String, u64), RewardMatrix)>,
}

impl ExperimentResult {
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("mode,episode,runs,median,q05,q95,ma_median,ma_q05,ma_q95\n");
        for agg in &self.aggregates {
            for (r, m) in agg.returns.iter().zip(&agg.moving_average) {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    agg.mode, r.episode, r.runs, r.median, r.q05, r.q95, m.median, m.q05, m.q95
                );
            }
        }
        out
    }

    pub fn reward_matrix_csv(&self) -> String {
        let tasks = self.reward_matrices.first().map(|(_, m)| m.tasks.clone()).unwrap_or_default();
        let mut out = String::from("mode,seed,episode");
        for t in &tasks {
            let _ = write!(out, ",{t:?}");
        }
        out.push('\n');
        for ((mode, seed), m) in &self.reward_matrices {
            for (e, row) in &m.rows {
                let _ = write!(out, "{mode},{seed},{e}");
                for v in row {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        out
    }

    /// Writes `curves.csv`, `modes_report.json`, `reward_matrix.csv` and
    /// `runs.json` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<(), ExperimentError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("curves.csv"), self.curves_csv())?;
        std::fs::write(dir.join("modes_report.json"), serde_json::to_string_pretty(&self.report)?)?;
        std::fs::write(dir.join("reward_matrix.csv"), self.reward_matrix_csv())?;
        std::fs::write(dir.join("runs.json"), serde_json::to_string_pretty(&self.runs)?)?;
        Ok(())
    }
}

/// Runs one `(mode, seed)` cell and extracts its curve and reward matrix.
pub fn run_cell(
    spec: &ExperimentSpec,
    mode: ScheduleMode,
    seed: u64,
    out: Option<&Path>,
) -> Result<(RunCurve, RewardMatrix), ExperimentError> {
    let config = spec.config_for(mode, seed);
    let main = config.task_set()?.external().first().map(|t| t.id.index).unwrap_or(0);
    let (mut episodes, mut returns) = (Vec::new(), Vec::new());
    let mut matrix = RewardMatrix::default();
    let mut ma_sum = 0.0;
    let start = Instant::now();
    let report = run_training_with(&config, out, &mut |record| {
        matrix.push(record);
        if let MetricRecord::Eval { global_episode, task, mean, .. } = record {
            if *task == main {
                episodes.push(*global_episode);
                returns.push(*mean);
                ma_sum += mean;
                if returns.len() > spec.window {
                    ma_sum -= returns[returns.len() - 1 - spec.window];
                }
                if spec.stop_at_threshold
                    && returns.len() >= spec.window
                    && ma_sum / spec.window as f64 >= spec.threshold
                {
                    return Control::Stop;
                }
            }
        }
        Control::Continue
    })?;
    let mut curve = RunCurve::from_points(&mode.to_string(), seed, episodes, returns, spec.window, spec.threshold);
    curve.episodes_run = report.episodes;
    curve.wall_seconds = start.elapsed().as_secs_f64();
    Ok((curve, matrix))
}

/// Runs every `(mode, seed)` combination; failed runs are kept with their
/// error and left out of the aggregates.
pub fn run_experiment(
    spec: &ExperimentSpec,
    out: Option<&Path>,
    progress: &mut dyn FnMut(&RunCurve),
) -> Result<ExperimentResult, ExperimentError> {
    spec.validate()?;
    let mut runs = Vec::new();
    let mut reward_matrices = Vec::new();
    for &mode in &spec.modes {
        for &seed in &spec.seeds {
            let run_dir = out.map(|d| d.join("runs").join(format!("{mode}_seed{seed}")));
            let curve = match run_cell(spec, mode, seed, run_dir.as_deref()) {
                Ok((curve, matrix)) => {
                    reward_matrices.push(((mode.to_string(), seed), matrix));
                    curve
                }
                Err(e) => {
                    warn!("{mode} seed {seed} failed: {e}");
                    let mut c =
                        RunCurve::from_points(&mode.to_string(), seed, vec![], vec![], spec.window, spec.threshold);
                    c.error = Some(e.to_string());
                    c
                }
            };
            info!(
                "{} seed {}: {} episodes, threshold at {:?}, {:.1}s",
                curve.mode, curve.seed, curve.episodes_run, curve.episodes_to_threshold, curve.wall_seconds
            );
            progress(&curve);
            runs.push(curve);
        }
    }
    let result = ExperimentResult {
        name: spec.name.clone(),
        aggregates: aggregate(&runs),
        report: compare_modes(&runs, spec.window, spec.threshold),
        runs,
        reward_matrices,
    };
    if let Some(dir) = out {
        result.write_outputs(dir)?;
    }
    Ok(result)
}
