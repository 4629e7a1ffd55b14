//! Monte Carlo suites over sweep points and their on-disk artifacts.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, SweepPoint};
use super::svg::{accuracy_chart, Series};
use crate::analysis::{detect_b, EdgeSetSequence};
use crate::data::Dataset;
use crate::training::{run_experiment, write_rounds_csv, RoundMetrics};
use crate::{Error, Result};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "MOBIDFL_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub point: usize,
    pub label: String,
    pub trial: usize,
    pub max_acc: f64,
    pub max_round: usize,
    pub final_acc: f64,
    /// Smallest connectivity window over the horizon, if any.
    pub detected_b: Option<usize>,
    pub min_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub point: usize,
    pub label: String,
    pub trial: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub mean_max_acc: f64,
    pub std_max_acc: f64,
    pub mean_final_acc: f64,
    pub std_final_acc: f64,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub point: SweepPoint,
    pub summaries: Vec<TrialSummary>,
    /// Per-trial round metrics, indexed by trial.
    pub rounds: Vec<Vec<RoundMetrics>>,
    /// Empty iff the point completed.
    pub failures: Vec<Failure>,
}

impl PointResult {
    pub fn completed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub points: Vec<PointResult>,
    pub comparison: Vec<ComparisonRow>,
    pub out_dir: PathBuf,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &Failure> {
        self.points.iter().flat_map(|p| &p.failures)
    }

    pub fn all_completed(&self) -> bool {
        self.points.iter().all(PointResult::completed)
    }
}

/// Sample mean and (n-1) standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One row per group, sorted by descending mean max-accuracy (ties keep the
/// input order).
pub fn compare_modes(groups: &[(String, Vec<TrialSummary>)]) -> Vec<ComparisonRow> {
    let mut rows: Vec<ComparisonRow> = groups
        .iter()
        .filter(|(_, s)| !s.is_empty())
        .map(|(label, s)| {
            let max: Vec<f64> = s.iter().map(|t| t.max_acc).collect();
            let fin: Vec<f64> = s.iter().map(|t| t.final_acc).collect();
            let (mean_max_acc, std_max_acc) = mean_std(&max);
            let (mean_final_acc, std_final_acc) = mean_std(&fin);
            ComparisonRow {
                label: label.clone(),
                mean_max_acc,
                std_max_acc,
                mean_final_acc,
                std_final_acc,
                trials: s.len(),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.mean_max_acc.total_cmp(&a.mean_max_acc));
    rows
}

/// Plain-text rendering of a comparison table, accuracies in percent.
pub fn comparison_text(rows: &[ComparisonRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>16}  {:>16}  {:>6}",
        "setting", "max acc (%)", "final acc (%)", "trials"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>8.2} ± {:<5.2}  {:>8.2} ± {:<5.2}  {:>6}",
            r.label,
            100.0 * r.mean_max_acc,
            100.0 * r.std_max_acc,
            100.0 * r.mean_final_acc,
            100.0 * r.std_final_acc,
            r.trials
        );
    }
    s
}

fn summarize(point: &SweepPoint, trial: usize, rounds: &[RoundMetrics], nodes: usize) -> TrialSummary {
    let (max_round, max_acc) = rounds.iter().fold((0, f64::NEG_INFINITY), |b, r| {
        if r.mean_acc > b.1 {
            (r.round, r.mean_acc)
        } else {
            b
        }
    });
    let seq = EdgeSetSequence {
        nodes,
        rounds: rounds.iter().map(|r| r.edges.clone()).collect(),
    };
    TrialSummary {
        point: point.index,
        label: point.label.clone(),
        trial,
        max_acc,
        max_round,
        final_acc: rounds.last().map_or(0.0, |r| r.mean_acc),
        detected_b: detect_b(&seq, rounds.len()),
        min_p: rounds.iter().map(|r| r.mixing_param).fold(f64::INFINITY, f64::min),
    }
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::config(WORKERS_ENV, format!("expected a worker count, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::invalid(format!("worker pool: {e}")))
}

/// Runs every (sweep point, trial) pair without writing anything.
pub fn simulate_suite(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<Vec<PointResult>> {
    cfg.validate()?;
    let points = cfg.expand_sweep();
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..cfg.trials).map(move |t| (p, t)))
        .collect();
    let pool = worker_pool()?;
    let outcomes: Vec<Result<Vec<RoundMetrics>>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, t)| {
                let pc = &points[p].config;
                run_experiment(&pc.setup(t), train, test, pc.trial_seed(t), false).map(|h| h.rounds)
            })
            .collect()
    });

    let mut results: Vec<PointResult> = points
        .into_iter()
        .map(|point| PointResult {
            point,
            summaries: Vec::new(),
            rounds: Vec::new(),
            failures: Vec::new(),
        })
        .collect();
    for (&(p, t), outcome) in jobs.iter().zip(outcomes) {
        let res = &mut results[p];
        match outcome {
            Ok(rounds) => {
                res.summaries
                    .push(summarize(&res.point, t, &rounds, cfg.topology.clients));
                res.rounds.push(rounds);
            }
            Err(e) => {
                res.failures.push(Failure {
                    point: p,
                    label: res.point.label.clone(),
                    trial: t,
                    error: e.to_string(),
                });
                res.rounds.push(Vec::new());
            }
        }
    }
    Ok(results)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const SUMMARY_CSV_HEADER: [&str; 8] = [
    "point",
    "label",
    "trial",
    "max_acc",
    "max_round",
    "final_acc",
    "detected_b",
    "min_p",
];
pub const COMPARISON_CSV_HEADER: [&str; 6] = [
    "label",
    "mean_max_acc",
    "std_max_acc",
    "mean_final_acc",
    "std_final_acc",
    "trials",
];
pub const FAILURES_CSV_HEADER: [&str; 4] = ["point", "label", "trial", "error"];

/// Runs the suite and writes the artifact bundle into `out_dir`:
///
/// * `point_NNN/rounds.csv` per-round metrics of every trial of a point
/// * `summary.csv` one row per completed trial
/// * `comparison.csv` / `comparison.txt` mean ± std per completed point
/// * `failures.csv` failed (point, trial) pairs, header only when none
/// * `accuracy.svg` mean accuracy curves with ±1 std bands
pub fn run_suite(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SuiteReport> {
    cfg.validate()?;
    let (train, test) = cfg.load_data()?;
    run_suite_with_data(cfg, &train, &test, out_dir)
}

/// [`run_suite`] on already loaded data.
pub fn run_suite_with_data(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    out_dir: &Path,
) -> Result<SuiteReport> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let points = simulate_suite(cfg, train, test)?;

    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    let mut groups = Vec::new();
    let mut series = Vec::new();
    for res in &points {
        let dir = out_dir.join(format!("point_{:03}", res.point.index));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let runs: Vec<(usize, &[RoundMetrics])> = res
            .rounds
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.is_empty())
            .map(|(t, r)| (t, r.as_slice()))
            .collect();
        let path = dir.join("rounds.csv");
        write_rounds_csv(create(&path)?, &runs, true)?;

        summaries.extend(res.summaries.iter().cloned());
        failures.extend(res.failures.iter().cloned());
        if res.completed() {
            groups.push((res.point.label.clone(), res.summaries.clone()));
            let horizon = runs.iter().map(|(_, r)| r.len()).min().unwrap_or(0);
            let (mut mean, mut std) = (Vec::with_capacity(horizon), Vec::with_capacity(horizon));
            for t in 0..horizon {
                let accs: Vec<f64> = runs.iter().map(|(_, r)| r[t].mean_acc).collect();
                let (m, s) = mean_std(&accs);
                mean.push(m);
                std.push(s);
            }
            series.push(Series {
                label: res.point.label.clone(),
                mean,
                std,
            });
        }
    }

    write_rows(&out_dir.join("summary.csv"), &summaries, &SUMMARY_CSV_HEADER)?;
    write_rows(&out_dir.join("failures.csv"), &failures, &FAILURES_CSV_HEADER)?;
    let comparison = compare_modes(&groups);
    write_rows(&out_dir.join("comparison.csv"), &comparison, &COMPARISON_CSV_HEADER)?;
    write_text(&out_dir.join("comparison.txt"), &comparison_text(&comparison))?;
    let title = format!(
        "G={} N={} trials={} T={}",
        cfg.topology.grid, cfg.topology.clients, cfg.trials, cfg.training.rounds
    );
    write_text(&out_dir.join("accuracy.svg"), &accuracy_chart(&title, &series))?;

    Ok(SuiteReport {
        points,
        comparison,
        out_dir: out_dir.to_path_buf(),
    })
}
