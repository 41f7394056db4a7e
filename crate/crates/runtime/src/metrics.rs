//! JSONL metrics and trajectory dumps.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use sacx_core::learner::LearnerMetrics;
use sacx_core::trajectory::Trajectory;
use serde::{Deserialize, Serialize};

use crate::actor::Segment;
use crate::RuntimeError;

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricRecord {
    /// First line of every run.
    Run {
        seed: u64,
        mode: String,
        tasks: Vec<String>,
        actors: usize,
        episode_length: usize,
    },
    Episode {
        actor: usize,
        episode: u64,
        /// Training episodes finished so far across all actors, this one included.
        global_episode: u64,
        version: u64,
        main_task: usize,
        schedule: Vec<usize>,
        segments: Vec<Segment>,
        task_returns: Vec<f64>,
        main_return: f64,
    },
    Eval {
        global_episode: u64,
        version: u64,
        task: usize,
        returns: Vec<f64>,
        mean: f64,
    },
    Learner {
        update: u64,
        learner: usize,
        version: u64,
        critic_loss: f64,
        policy_loss: f64,
        td_error: Vec<f64>,
        entropy: Vec<f64>,
        behavior_counts: Vec<usize>,
    },
}

impl MetricRecord {
    pub fn learner(update: u64, learner: usize, version: u64, m: &LearnerMetrics) -> Self {
        MetricRecord::Learner {
            update,
            learner,
            version,
            critic_loss: m.critic_loss,
            policy_loss: m.policy_loss,
            td_error: m.td_error.clone(),
            entropy: m.entropy.clone(),
            behavior_counts: m.behavior_counts.clone(),
        }
    }
}

/// Writes records as JSON lines; a sink without a file discards them.
#[derive(Debug, Default)]
pub struct MetricsSink {
    out: Option<BufWriter<File>>,
}

impl MetricsSink {
    pub fn discard() -> Self {
        Self { out: None }
    }

    pub fn create(path: &Path) -> Result<Self, RuntimeError> {
        Ok(Self { out: Some(BufWriter::new(File::create(path)?)) })
    }

    pub fn record(&mut self, record: &MetricRecord) -> Result<(), RuntimeError> {
        if let Some(out) = &mut self.out {
            serde_json::to_writer(&mut *out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), RuntimeError> {
        if let Some(out) = &mut self.out {
            out.flush()?;
        }
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>, RuntimeError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// One logged step, as written to trajectory dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub actor: usize,
    pub episode: u64,
    pub t: usize,
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub rewards: Vec<f64>,
    pub task: usize,
    pub behavior_log_density: f64,
}

pub fn write_trajectory<W: Write>(w: &mut W, trajectory: &Trajectory) -> Result<(), RuntimeError> {
    for (t, s) in trajectory.steps.iter().enumerate() {
        let rec = StepRecord {
            actor: trajectory.actor,
            episode: trajectory.episode,
            t,
            observation: s.observation.clone(),
            action: s.action.clone(),
            rewards: s.rewards.clone(),
            task: s.behavior_task,
            behavior_log_density: s.behavior_log_density,
        };
        serde_json::to_writer(&mut *w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let recs = vec![
            MetricRecord::Run {
                seed: 1,
                mode: "uniform".into(),
                tasks: vec!["A".into()],
                actors: 2,
                episode_length: 4,
            },
            MetricRecord::Eval { global_episode: 3, version: 2, task: 0, returns: vec![0.25], mean: 0.25 },
        ];
        let mut sink = MetricsSink::create(&path).unwrap();
        for r in &recs {
            sink.record(r).unwrap();
        }
        sink.flush().unwrap();
        assert_eq!(read_metrics(&path).unwrap(), recs);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"kind\":\"run\""));
    }
}
