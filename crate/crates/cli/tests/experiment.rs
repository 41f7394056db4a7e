//! Aggregation helpers against hand-computed values, plus a tiny end-to-end
//! experiment on the chain fixture.

use proptest::prelude::*;
use sacx_cli::experiment::{bands, RunCurve};
use sacx_cli::{
    compare_modes, emit_reward_matrix, episodes_to_threshold, moving_average, nearest_rank, presets, run_experiment,
    ExperimentSpec,
};
use sacx_runtime::actor::Segment;
use sacx_runtime::MetricRecord;

#[test]
fn nearest_rank_on_five_values() {
    let v = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert_eq!(nearest_rank(&v, 0.5), 3.0);
    assert_eq!(nearest_rank(&v, 0.05), 1.0);
    assert_eq!(nearest_rank(&v, 0.95), 5.0);
    assert_eq!(nearest_rank(&v, 0.0), 1.0);
    assert_eq!(nearest_rank(&v, 1.0), 5.0);
    assert_eq!(nearest_rank(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.0);
}

#[test]
fn moving_average_is_trailing() {
    assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
    assert_eq!(moving_average(&[2.0, 4.0], 5), vec![2.0, 3.0]);
    assert!(moving_average(&[], 3).is_empty());
}

#[test]
fn threshold_needs_a_full_window() {
    let episodes = [10, 20, 30, 40];
    // The partial first window already averages 1.0 but must not count.
    assert_eq!(episodes_to_threshold(&episodes, &[1.0, 0.0, 1.0, 1.0], 2, 0.9), Some(40));
    assert_eq!(episodes_to_threshold(&episodes, &[1.0, 0.0, 1.0, 0.0], 2, 0.9), None);
    assert_eq!(episodes_to_threshold(&episodes, &[0.5; 4], 4, 0.5), Some(40));
}

#[test]
fn single_seed_band_is_the_curve() {
    let e = [1, 2, 3];
    let v = [0.1, 0.7, 0.3];
    let b = bands(&[(&e, &v)]);
    for (band, value) in b.iter().zip(v) {
        assert_eq!((band.median, band.q05, band.q95, band.runs), (value, value, value, 1));
    }
}

#[test]
fn constant_runs_have_zero_width() {
    let e = [1, 2];
    let v = [0.4, 0.4];
    let b = bands(&[(&e, &v), (&e, &v), (&e, &v)]);
    assert!(b.iter().all(|band| band.q05 == band.q95 && band.median == 0.4 && band.runs == 3));
}

fn curve(mode: &str, seed: u64, reach: Option<usize>) -> RunCurve {
    let n = 20;
    let returns: Vec<f64> = (0..n).map(|i| if reach.is_some_and(|r| i + 1 >= r) { 1.0 } else { 0.0 }).collect();
    RunCurve::from_points(mode, seed, (1..=n as u64).collect(), returns, 1, 0.5)
}

#[test]
fn unreached_mode_ranks_last() {
    let curves = vec![curve("a", 0, Some(10)), curve("b", 0, None)];
    let report = compare_modes(&curves, 1, 0.5);
    assert_eq!(report.modes["a"].median_episodes_to_threshold, Some(10));
    assert_eq!(report.modes["b"].median_episodes_to_threshold, None);
    assert_eq!(report.ranking, vec![vec!["a".to_string()], vec!["b".to_string()]]);
}

#[test]
fn equal_medians_tie() {
    let curves = vec![curve("a", 0, Some(5)), curve("a", 1, Some(7)), curve("b", 0, Some(7)), curve("b", 1, Some(3))];
    // Nearest-rank median of two values is the lower one: a -> 5, b -> 3.
    let report = compare_modes(&curves, 1, 0.5);
    assert_eq!(report.ranking, vec![vec!["b".to_string()], vec!["a".to_string()]]);
    let tied = vec![curve("a", 0, Some(4)), curve("b", 0, Some(4)), curve("c", 0, None)];
    let report = compare_modes(&tied, 1, 0.5);
    assert_eq!(report.ranking, vec![vec!["a".to_string(), "b".to_string()], vec!["c".to_string()]]);
}

#[test]
fn median_counts_unreached_seeds_as_infinite() {
    let curves = vec![curve("a", 0, Some(3)), curve("a", 1, None), curve("a", 2, None)];
    assert_eq!(compare_modes(&curves, 1, 0.5).modes["a"].median_episodes_to_threshold, None);
    let curves = vec![curve("a", 0, Some(3)), curve("a", 1, Some(9)), curve("a", 2, None)];
    assert_eq!(compare_modes(&curves, 1, 0.5).modes["a"].median_episodes_to_threshold, Some(9));
}

fn episode(global_episode: u64, segments: Vec<Segment>, k: usize) -> MetricRecord {
    MetricRecord::Episode {
        actor: 0,
        episode: global_episode - 1,
        global_episode,
        version: 0,
        main_task: k - 1,
        schedule: segments.iter().map(|s| s.task).collect(),
        segments,
        task_returns: vec![0.0; k],
        main_return: 0.0,
    }
}

#[test]
fn reward_matrix_by_hand() {
    let run = MetricRecord::Run {
        seed: 0,
        mode: "uniform".into(),
        tasks: vec!["A".into(), "B".into(), "C".into()],
        actors: 1,
        episode_length: 4,
    };
    let records = vec![
        run,
        episode(
            1,
            vec![
                Segment { task: 0, start: 0, len: 2, mean_reward: 1.0 },
                Segment { task: 2, start: 2, len: 2, mean_reward: 0.5 },
            ],
            3,
        ),
        // The same task twice: cells are step-weighted means.
        episode(
            2,
            vec![
                Segment { task: 1, start: 0, len: 3, mean_reward: 1.0 },
                Segment { task: 1, start: 3, len: 1, mean_reward: 0.0 },
            ],
            3,
        ),
    ];
    let m = emit_reward_matrix(&records);
    assert_eq!(m.tasks, vec!["A", "B", "C"]);
    assert_eq!(m.rows.len(), 2);
    assert_eq!(m.rows[0].0, 1);
    assert_eq!(m.rows[0].1[0], 1.0);
    assert!(m.rows[0].1[1].is_nan());
    assert_eq!(m.rows[0].1[2], 0.5);
    assert!(m.rows[1].1[0].is_nan() && m.rows[1].1[2].is_nan());
    assert_eq!(m.rows[1].1[1], 0.75);
    let csv = m.to_csv();
    assert_eq!(csv, "episode,\"A\",\"B\",\"C\"\n1,1,NaN,0.5\n2,NaN,0.75,NaN\n");
}

#[test]
fn spec_round_trips_through_toml() {
    for spec in [presets::stack_experiment(), presets::distractor_experiment(), presets::chain_experiment()] {
        let text = spec.to_toml_string().unwrap();
        assert_eq!(ExperimentSpec::from_toml_str(&text).unwrap(), spec);
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = presets::chain_experiment();
    spec.seeds.clear();
    assert!(spec.validate().is_err());
    let mut spec = presets::chain_experiment();
    spec.base.evaluation.every = 0;
    assert!(spec.validate().is_err());
}

#[test]
fn chain_experiment_writes_outputs() {
    let mut spec = presets::chain_experiment();
    spec.seeds = vec![0, 1];
    spec.modes.push(sacx_core::scheduler::ScheduleMode::Uniform);
    spec.episodes = 50;
    spec.window = 2;
    let dir = tempfile::tempdir().unwrap();
    let mut seen = 0;
    let result = run_experiment(&spec, Some(dir.path()), &mut |_| seen += 1).unwrap();
    assert_eq!(seen, 4);
    assert_eq!(result.runs.len(), 4);
    assert!(result.runs.iter().all(|r| r.error.is_none() && r.episodes_run == 50));
    for f in ["curves.csv", "modes_report.json", "reward_matrix.csv", "runs.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert!(dir.path().join("runs/learned_seed1/metrics.jsonl").is_file());
    let header = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    // Two evaluation points per run (every 25 episodes) for each of two modes.
    assert_eq!(header.lines().count(), 1 + 2 * 2);
}

proptest! {
    #[test]
    fn bands_are_ordered(values in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 5), 1..8)) {
        let e: Vec<u64> = (0..5).collect();
        let curves: Vec<(&[u64], &[f64])> = values.iter().map(|v| (&e[..], &v[..])).collect();
        for b in bands(&curves) {
            prop_assert!(b.q05 <= b.median && b.median <= b.q95);
        }
    }

    #[test]
    fn moving_average_matches_brute_force(values in prop::collection::vec(-5.0f64..5.0, 1..300), window in 1usize..40) {
        let ma = moving_average(&values, window);
        for (i, m) in ma.iter().enumerate() {
            let kept = &values[(i + 1).saturating_sub(window)..=i];
            prop_assert!((m - kept.iter().sum::<f64>() / kept.len() as f64).abs() <= 1e-9);
        }
    }
}
