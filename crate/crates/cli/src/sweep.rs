//! Hyperparameter sweeps with disjoint tuning and evaluation seeds.
//!
//! A sweep file is a run config plus a `[sweep]` section:
//!
//! ```toml
//! algorithm = "iql"
//! dataset = "data/point-highdim-expert.bin"
//!
//! [sweep]
//! tuning_seeds = [0, 1, 2, 3, 4]
//! evaluation_seeds = [100, 101, 102]
//!
//! [sweep.axes]
//! "regularizer.dropout" = [0.1, 0.2, 0.3, 0.5]
//! ```
//!
//! Every point of the Cartesian product of the axes runs on each tuning
//! seed. The point with the highest mean RAR wins; ties go to the smaller
//! total regularization, then to the lexicographically smaller assignment.
//! The winner is then re-run on the evaluation seeds.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{set_dotted, AlgorithmName, RunConfig};
use crate::error::{CliError, CliResult};
use crate::jobs::map_jobs;
use crate::run::{run_seed, Prepared};

pub const OMEGA_GRID: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 0.1];
pub const REBRAC_DROPOUT_GRID: [f64; 6] = [0.1, 0.2, 0.3, 0.5, 0.75, 0.9];
pub const IQL_DROPOUT_GRID: [f64; 4] = [0.1, 0.2, 0.3, 0.5];
pub const NOISE_GRID: [f64; 5] = [0.003, 0.01, 0.03, 0.1, 0.3];
pub const DEFAULT_TUNING_SEEDS: usize = 5;
pub const DEFAULT_EVALUATION_SEEDS: usize = 10;
/// First default evaluation seed; defaults never overlap the tuning range.
pub const EVALUATION_SEED_BASE: u64 = 1000;

/// Keys a sweep may not vary: they select the data or the output layout.
const FIXED_KEYS: [&str; 6] = ["algorithm", "dataset", "env", "seeds", "out", "name"];

pub fn default_tuning_seeds() -> Vec<u64> {
    (0..DEFAULT_TUNING_SEEDS as u64).collect()
}

pub fn default_evaluation_seeds() -> Vec<u64> {
    (EVALUATION_SEED_BASE..EVALUATION_SEED_BASE + DEFAULT_EVALUATION_SEEDS as u64).collect()
}

/// The tuning grid for a regularizer axis, if it has one.
pub fn grid_for(axis: &str, algorithm: AlgorithmName) -> Option<&'static [f64]> {
    match axis {
        "regularizer.weight_decay" => Some(&OMEGA_GRID),
        "regularizer.dropout" => Some(match algorithm {
            AlgorithmName::Rebrac => &REBRAC_DROPOUT_GRID,
            AlgorithmName::Iql => &IQL_DROPOUT_GRID,
        }),
        "regularizer.input_noise" | "regularizer.objective_noise" | "regularizer.gradient_noise" => Some(&NOISE_GRID),
        _ => None,
    }
}

fn as_number(v: &toml::Value) -> Option<f64> {
    match v {
        toml::Value::Float(f) => Some(*f),
        toml::Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

/// Accepts a value for `axis` only if it belongs to the axis's grid.
/// Axes without a grid accept anything the run config accepts.
pub fn check_grid_value(axis: &str, value: &toml::Value, algorithm: AlgorithmName) -> CliResult<()> {
    let Some(grid) = grid_for(axis, algorithm) else {
        return Ok(());
    };
    let path = format!("sweep.axes.{axis}");
    let x = as_number(value).ok_or_else(|| CliError::config(&path, format!("expected a number, got {value}")))?;
    if grid.iter().any(|&g| (x - g).abs() <= 1e-9 * g) {
        Ok(())
    } else {
        Err(CliError::config(path, format!("{x} is not in the tuning grid {grid:?}")))
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    axes: BTreeMap<String, Vec<toml::Value>>,
    #[serde(default)]
    tuning_seeds: Option<Vec<u64>>,
    #[serde(default)]
    evaluation_seeds: Option<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub name: String,
    pub values: Vec<toml::Value>,
}

/// One grid point: its assignments in axis order and the resulting config.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub assignments: Vec<(String, toml::Value)>,
    pub config: RunConfig,
}

impl Point {
    pub fn label(&self) -> String {
        self.assignments
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub base: RunConfig,
    base_table: toml::Table,
    /// Sorted by name, which fixes the enumeration order.
    pub axes: Vec<Axis>,
    pub tuning_seeds: Vec<u64>,
    pub evaluation_seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        let mut table = RunConfig::parse_table(text)?;
        let section = table
            .remove("sweep")
            .ok_or_else(|| CliError::config("sweep", "missing [sweep] section"))?;
        let section: SweepSection = serde_path_to_error::deserialize(section).map_err(|e| {
            let p = e.path().to_string();
            let path = if p.is_empty() || p == "." { "sweep".into() } else { format!("sweep.{p}") };
            CliError::config(path, e.inner().to_string())
        })?;
        let base = RunConfig::from_table(table.clone())?;
        let spec = Self {
            base,
            base_table: table,
            axes: section
                .axes
                .into_iter()
                .map(|(name, values)| Axis { name, values })
                .collect(),
            tuning_seeds: section.tuning_seeds.unwrap_or_else(default_tuning_seeds),
            evaluation_seeds: section.evaluation_seeds.unwrap_or_else(default_evaluation_seeds),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io_at(path, e))?;
        let mut spec = Self::from_toml_str(&text)?;
        spec.base.resolve_relative_to(path.parent().unwrap_or(Path::new("")));
        Ok(spec)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.axes.is_empty() {
            return Err(CliError::config("sweep.axes", "at least one axis is required"));
        }
        for axis in &self.axes {
            let path = format!("sweep.axes.{}", axis.name);
            let root = axis.name.split('.').next().unwrap_or_default();
            if FIXED_KEYS.contains(&root) {
                return Err(CliError::config(path, "this key cannot be swept"));
            }
            if axis.values.is_empty() {
                return Err(CliError::config(path, "axis has no values"));
            }
            let distinct: BTreeSet<String> = axis.values.iter().map(|v| v.to_string()).collect();
            if distinct.len() != axis.values.len() {
                return Err(CliError::config(path, "axis values must be distinct"));
            }
            for v in &axis.values {
                check_grid_value(&axis.name, v, self.base.algorithm)?;
            }
        }
        for (name, seeds) in [("sweep.tuning_seeds", &self.tuning_seeds), ("sweep.evaluation_seeds", &self.evaluation_seeds)] {
            if seeds.is_empty() {
                return Err(CliError::config(name, "at least one seed is required"));
            }
            if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
                return Err(CliError::config(name, "seeds must be distinct"));
            }
        }
        let tuning: BTreeSet<u64> = self.tuning_seeds.iter().copied().collect();
        if let Some(s) = self.evaluation_seeds.iter().find(|s| tuning.contains(s)) {
            return Err(CliError::config(
                "sweep.evaluation_seeds",
                format!("seed {s} is also a tuning seed; the two sets must be disjoint"),
            ));
        }
        self.points().map(|_| ())
    }

    /// Cartesian product of the axes, last axis varying fastest.
    pub fn points(&self) -> CliResult<Vec<Point>> {
        let mut combos: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
        for axis in &self.axes {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    axis.values.iter().map(move |v| {
                        let mut next = c.clone();
                        next.push((axis.name.clone(), v.clone()));
                        next
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .map(|assignments| {
                let mut table = self.base_table.clone();
                for (k, v) in &assignments {
                    set_dotted(&mut table, k, v.clone())?;
                }
                let mut config = RunConfig::from_table(table).map_err(|e| match e {
                    CliError::Config { path, message } => CliError::config(format!("sweep.axes ({path})"), message),
                    other => other,
                })?;
                config.dataset = self.base.dataset.clone();
                Ok(Point { assignments, config })
            })
            .collect()
    }
}

/// Executes one child run and returns its normalized RAR score.
pub trait Runner: Sync {
    fn run(&self, config: &RunConfig, seed: u64, dir: &Path) -> CliResult<f64>;
}

/// Trains for real, sharing one loaded dataset across all children.
pub struct TrainingRunner {
    prepared: Prepared,
}

impl TrainingRunner {
    pub fn new(base: &RunConfig) -> CliResult<Self> {
        let prepared = Prepared::load(base)?;
        base.rar_window_for(&prepared.env)?;
        Ok(Self { prepared })
    }
}

impl Runner for TrainingRunner {
    fn run(&self, config: &RunConfig, seed: u64, dir: &Path) -> CliResult<f64> {
        run_seed(config, &self.prepared, seed, dir).map(|s| s.score)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Tuning,
    Evaluation,
}

/// One child run as recorded in `sweep.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub phase: Phase,
    pub point: usize,
    pub label: String,
    pub seed: u64,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub label: String,
    /// Mean tuning score over the completed seeds.
    pub mean_score: Option<f64>,
    pub completed: usize,
    pub failed: usize,
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub points: Vec<PointResult>,
    pub winner: usize,
    pub winner_label: String,
    pub tuning_seeds: Vec<u64>,
    pub evaluation_seeds: Vec<u64>,
    pub evaluation_scores: Vec<Option<f64>>,
    pub evaluation_mean: Option<f64>,
    pub records: Vec<TrialRecord>,
}

/// Highest mean score; ties to the smaller magnitude, then the smaller label.
pub fn select_winner(points: &[PointResult]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in points.iter().enumerate() {
        let Some(score) = p.mean_score else { continue };
        best = match best {
            None => Some(i),
            Some(b) => {
                let q = &points[b];
                let bs = q.mean_score.expect("scored");
                let better = score > bs
                    || (score == bs
                        && (p.magnitude < q.magnitude || (p.magnitude == q.magnitude && p.label < q.label)));
                Some(if better { i } else { b })
            }
        };
    }
    best
}

fn record(phase: Phase, point: usize, label: &str, seed: u64, result: &CliResult<f64>) -> TrialRecord {
    TrialRecord {
        phase,
        point,
        label: label.to_string(),
        seed,
        score: result.as_ref().ok().copied(),
        error: result.as_ref().err().map(|e| e.to_string()),
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Runs the sweep and writes `sweep.jsonl`, `results.csv`, `summary.json`
/// and `winner.toml` into `out`. Child runs live under `out/tuning/pNNN/`
/// and `out/evaluation/`.
pub fn sweep<R: Runner>(spec: &SweepSpec, runner: &R, out: &Path, jobs: usize) -> CliResult<SweepOutcome> {
    spec.validate()?;
    let points = spec.points()?;
    fs::create_dir_all(out).map_err(|e| CliError::io_at(out, e))?;
    let labels: Vec<String> = points.iter().map(Point::label).collect();

    let tasks: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| spec.tuning_seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results = map_jobs(tasks.len(), jobs, |i| {
        let (p, seed) = tasks[i];
        let dir = out.join("tuning").join(format!("p{p:03}")).join(format!("seed-{seed}"));
        runner.run(&points[p].config, seed, &dir)
    })?;
    let mut records: Vec<TrialRecord> = tasks
        .iter()
        .zip(&results)
        .map(|(&(p, seed), r)| record(Phase::Tuning, p, &labels[p], seed, r))
        .collect();

    if results.iter().all(|r| r.is_err()) {
        write_logs(out, &records)?;
        let first = results.into_iter().find_map(|r| r.err()).expect("at least one run");
        return Err(first.context(&format!("all {} tuning runs failed; first failure", tasks.len())));
    }

    let summaries: Vec<PointResult> = points
        .iter()
        .enumerate()
        .map(|(p, point)| {
            let scores: Vec<f64> = records.iter().filter(|r| r.point == p).filter_map(|r| r.score).collect();
            PointResult {
                label: labels[p].clone(),
                mean_score: mean(&scores),
                completed: scores.len(),
                failed: spec.tuning_seeds.len() - scores.len(),
                magnitude: point.config.regularizer.magnitude(),
            }
        })
        .collect();
    let winner = select_winner(&summaries).expect("some point completed");

    let eval = map_jobs(spec.evaluation_seeds.len(), jobs, |i| {
        let seed = spec.evaluation_seeds[i];
        runner.run(&points[winner].config, seed, &out.join("evaluation").join(format!("seed-{seed}")))
    })?;
    records.extend(
        spec.evaluation_seeds
            .iter()
            .zip(&eval)
            .map(|(&seed, r)| record(Phase::Evaluation, winner, &labels[winner], seed, r)),
    );
    write_logs(out, &records)?;

    let evaluation_scores: Vec<Option<f64>> = eval.iter().map(|r| r.as_ref().ok().copied()).collect();
    let completed: Vec<f64> = evaluation_scores.iter().flatten().copied().collect();
    let outcome = SweepOutcome {
        points: summaries,
        winner,
        winner_label: labels[winner].clone(),
        tuning_seeds: spec.tuning_seeds.clone(),
        evaluation_seeds: spec.evaluation_seeds.clone(),
        evaluation_mean: mean(&completed),
        evaluation_scores,
        records,
    };
    let summary_path = out.join("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&outcome)?).map_err(|e| CliError::io_at(&summary_path, e))?;
    let winner_path = out.join("winner.toml");
    fs::write(&winner_path, points[winner].config.to_toml()?).map_err(|e| CliError::io_at(&winner_path, e))?;
    Ok(outcome)
}

fn write_logs(out: &Path, records: &[TrialRecord]) -> CliResult<()> {
    let log_path = out.join("sweep.jsonl");
    let mut log = fs::File::create(&log_path).map_err(|e| CliError::io_at(&log_path, e))?;
    for r in records {
        writeln!(log, "{}", serde_json::to_string(r)?).map_err(|e| CliError::io_at(&log_path, e))?;
    }
    let csv_path = out.join("results.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["phase", "point", "label", "seed", "score", "error"])?;
    for r in records {
        let phase = match r.phase {
            Phase::Tuning => "tuning",
            Phase::Evaluation => "evaluation",
        };
        w.write_record([
            phase.to_string(),
            r.point.to_string(),
            r.label.clone(),
            r.seed.to_string(),
            r.score.map(|s| s.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io_at(&csv_path, e))
}

/// Reads `sweep.jsonl` back.
pub fn read_log(out: &Path) -> CliResult<Vec<TrialRecord>> {
    let path = out.join("sweep.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io_at(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::io_at(&path, e)))
        .collect()
}
