//! Score tables and aggregate metrics over finished runs.
//!
//! Inputs are run directories (searched recursively for `config.toml`) or
//! `scores.csv` files. Outputs:
//! - `scores.csv`: `algorithm,task,seed,score`
//! - `metrics.json`: per-algorithm median, IQM, mean and optimality gap with
//!   bootstrap intervals, plus probability of improvement between every
//!   pair of algorithms that share a task set
//! - `profile-<algorithm>.csv`: `tau,fraction` performance profile

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use actoreg_core::stats::{
    aggregate_metrics, performance_profile, probability_of_improvement, rar, threshold_grid, AggregateMetrics,
    BootstrapConfig, Estimate, ScoreMatrix,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::run::{RunSummary, CONFIG_FILE, EVAL_FILE, SUMMARY_FILE};

/// Profile thresholds, in units of normalized score / 100.
pub const PROFILE_LOW: f64 = 0.0;
pub const PROFILE_HIGH: f64 = 1.5;
pub const PROFILE_POINTS: usize = 151;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub algorithm: String,
    pub task: String,
    pub seed: u64,
    pub score: f64,
}

#[derive(Debug, Deserialize)]
struct EvalRow {
    #[allow(dead_code)]
    step: u64,
    #[allow(dead_code)]
    mean_return: f64,
    score: f64,
}

/// Score of one run directory: the RAR of its `eval.csv` scores.
pub fn score_run_dir(dir: &Path) -> CliResult<ScoreRow> {
    let named = |what: &str| CliError::Io(format!("run dir {}: {what}", dir.display()));
    let summary_path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&summary_path).map_err(|_| named("missing summary.json (run incomplete?)"))?;
    let summary: RunSummary = serde_json::from_str(&text).map_err(|e| named(&format!("summary.json: {e}")))?;
    let eval_path = dir.join(EVAL_FILE);
    if !eval_path.exists() {
        return Err(named("missing eval series eval.csv"));
    }
    let mut reader = csv::Reader::from_path(&eval_path).map_err(|e| named(&format!("eval.csv: {e}")))?;
    let scores: Vec<f64> = reader
        .deserialize::<EvalRow>()
        .map(|r| r.map(|r| r.score))
        .collect::<Result<_, _>>()
        .map_err(|e| named(&format!("eval.csv: {e}")))?;
    let score = rar(&scores, summary.rar_window).map_err(|e| named(&format!("eval.csv: {e}")))?;
    Ok(ScoreRow {
        algorithm: summary.algorithm,
        task: summary.task,
        seed: summary.seed,
        score,
    })
}

fn find_run_dirs(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    if dir.join(CONFIG_FILE).is_file() {
        out.push(dir.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io_at(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for e in entries {
        find_run_dirs(&e, out)?;
    }
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> CliResult<Vec<ScoreRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io_at(path, e))?;
    reader
        .deserialize()
        .collect::<Result<Vec<ScoreRow>, _>>()
        .map_err(|e| CliError::io_at(path, e))
}

/// Score rows from run directories and `.csv` files.
pub fn collect_rows(inputs: &[PathBuf]) -> CliResult<Vec<ScoreRow>> {
    let mut rows = Vec::new();
    for input in inputs {
        if input.is_file() {
            rows.extend(read_scores_csv(input)?);
            continue;
        }
        if !input.is_dir() {
            return Err(CliError::Io(format!("{}: no such file or directory", input.display())));
        }
        let mut dirs = Vec::new();
        find_run_dirs(input, &mut dirs)?;
        if dirs.is_empty() {
            return Err(CliError::Io(format!("{}: contains no run directories", input.display())));
        }
        for d in dirs {
            rows.push(score_run_dir(&d)?);
        }
    }
    if rows.is_empty() {
        return Err(CliError::Io("no scores found".into()));
    }
    Ok(rows)
}

/// One score matrix per algorithm. Runs are the seeds in ascending order;
/// every task of an algorithm must have the same number of runs.
pub fn score_matrices(rows: &[ScoreRow]) -> CliResult<Vec<ScoreMatrix>> {
    let mut by_alg: BTreeMap<&str, BTreeMap<&str, Vec<(u64, f64)>>> = BTreeMap::new();
    for r in rows {
        by_alg
            .entry(&r.algorithm)
            .or_default()
            .entry(&r.task)
            .or_default()
            .push((r.seed, r.score));
    }
    let mut out = Vec::new();
    for (alg, tasks) in by_alg {
        let runs = tasks.values().map(Vec::len).max().unwrap_or(0);
        let mut columns = Vec::new();
        for (task, mut entries) in tasks.clone() {
            if entries.len() != runs {
                return Err(CliError::Io(format!(
                    "algorithm {alg}: task {task} has {} runs, other tasks have {runs}",
                    entries.len()
                )));
            }
            entries.sort_by_key(|e| e.0);
            if entries.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(CliError::Io(format!("algorithm {alg}: task {task} lists a seed twice")));
            }
            columns.push(entries.into_iter().map(|e| e.1).collect::<Vec<f64>>());
        }
        let scores = (0..runs).map(|r| columns.iter().map(|c| c[r]).collect()).collect();
        out.push(ScoreMatrix::new(alg, tasks.keys().map(|t| t.to_string()).collect(), scores)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmMetrics {
    pub runs: usize,
    pub tasks: Vec<String>,
    #[serde(flatten)]
    pub metrics: AggregateMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub estimate: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub resamples: usize,
    pub confidence: f64,
    pub seed: u64,
    pub algorithms: BTreeMap<String, AlgorithmMetrics>,
    pub probability_of_improvement: Vec<Improvement>,
}

pub fn compute_metrics(matrices: &[ScoreMatrix], cfg: &BootstrapConfig) -> CliResult<Metrics> {
    let mut algorithms = BTreeMap::new();
    for m in matrices {
        algorithms.insert(
            m.algorithm.clone(),
            AlgorithmMetrics {
                runs: m.runs(),
                tasks: m.tasks.clone(),
                metrics: aggregate_metrics(m, cfg)?,
            },
        );
    }
    let mut poi = Vec::new();
    for a in matrices {
        for b in matrices {
            if a.algorithm != b.algorithm && a.tasks == b.tasks {
                poi.push(Improvement {
                    a: a.algorithm.clone(),
                    b: b.algorithm.clone(),
                    estimate: probability_of_improvement(a, b, cfg)?,
                });
            }
        }
    }
    Ok(Metrics {
        resamples: cfg.resamples,
        confidence: cfg.confidence,
        seed: cfg.seed,
        algorithms,
        probability_of_improvement: poi,
    })
}

/// Reads `inputs`, writes every report artifact into `out`.
pub fn report(inputs: &[PathBuf], out: &Path, cfg: &BootstrapConfig) -> CliResult<Metrics> {
    let rows = collect_rows(inputs)?;
    let matrices = score_matrices(&rows)?;
    let metrics = compute_metrics(&matrices, cfg)?;
    fs::create_dir_all(out).map_err(|e| CliError::io_at(out, e))?;

    let mut w = csv::Writer::from_path(out.join("scores.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let path = out.join("metrics.json");
    fs::write(&path, serde_json::to_string_pretty(&metrics)?).map_err(|e| CliError::io_at(&path, e))?;

    let taus = threshold_grid(PROFILE_LOW, PROFILE_HIGH, PROFILE_POINTS);
    for m in &matrices {
        let curve = performance_profile(m, &taus)?;
        let mut w = csv::Writer::from_path(out.join(format!("profile-{}.csv", m.algorithm)))?;
        w.write_record(["tau", "fraction"])?;
        for (t, f) in taus.iter().zip(&curve) {
            w.write_record([t.to_string(), f.to_string()])?;
        }
        w.flush()?;
    }
    Ok(metrics)
}
