//! Single training runs and their artifact directories.
//!
//! A run directory holds:
//! - `config.toml`: resolved single-seed snapshot; re-running it reproduces the run
//! - `eval.csv`: `step,mean_return,score` per checkpoint
//! - `diagnostics.jsonl`: one actor diagnostics report per diagnosed checkpoint
//! - `losses.jsonl`: loss reports every `log_interval` steps
//! - `checkpoints/step-XXXXXXXX.ckpt` and `checkpoints/final.ckpt`: actor parameters
//! - `summary.json`: RAR and final scores

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use actoreg_core::algorithms::{train_run, LossReport, RunHook, RunSpec, Trainer};
use actoreg_core::data::{load_dataset, split, Environment, ReferenceReturns, SplitDataset, TransitionDataset};
use actoreg_core::data::DEFAULT_VALIDATION_FRACTION;
use actoreg_core::diagnostics::{diagnostic_batch, diagnostics_ratio_report, DiagnosticsInput};
use actoreg_core::networks::{Actor, Mlp};
use actoreg_core::stats::{normalized_score, rar};
use actoreg_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::jobs::map_jobs;

pub const CONFIG_FILE: &str = "config.toml";
pub const EVAL_FILE: &str = "eval.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";
pub const LOSSES_FILE: &str = "losses.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Dataset, task and split shared by every seed of a config.
pub struct Prepared {
    pub env: Environment,
    pub dataset: TransitionDataset,
    pub split: SplitDataset,
    pub refs: ReferenceReturns,
    pub task: String,
}

impl Prepared {
    pub fn load(cfg: &RunConfig) -> CliResult<Self> {
        let dataset = load_dataset(&cfg.dataset).map_err(|e| CliError::io_at(&cfg.dataset, e))?;
        let env = match &cfg.env {
            Some(name) if *name != dataset.meta.env => {
                return Err(CliError::config(
                    "env",
                    format!("{name:?} does not match the dataset's environment {:?}", dataset.meta.env),
                ))
            }
            _ => Environment::by_name(&dataset.meta.env)?,
        };
        let split = split(dataset.len(), DEFAULT_VALIDATION_FRACTION, cfg.split_seed)?;
        let refs = env.reference_returns();
        let task = format!("{}-{}", dataset.meta.env, dataset.meta.tier.name());
        Ok(Self {
            env,
            dataset,
            split,
            refs,
            task,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub task: String,
    pub seed: u64,
    pub steps: u64,
    pub rar_window: usize,
    /// Mean raw return over the last `rar_window` checkpoints.
    pub rar_return: f64,
    /// The same window on the normalized scale.
    pub score: f64,
    pub final_return: f64,
    pub final_score: f64,
}

/// `<root>/<name>/seed-<seed>`.
pub fn run_dir(root: &Path, cfg: &RunConfig, task: &str, seed: u64) -> PathBuf {
    let name = cfg
        .name
        .clone()
        .unwrap_or_else(|| format!("{}-{task}", cfg.algorithm.as_str()));
    root.join(name).join(format!("seed-{seed}"))
}

pub fn checkpoint_name(step: u64) -> String {
    format!("step-{step:08}.ckpt")
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io_at(path, e))?))
}

fn save_actor(actor: &Actor, path: &Path) -> actoreg_core::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    actor.net.write_checkpoint(&mut w)?;
    Ok(w.flush()?)
}

pub fn read_actor(path: &Path) -> CliResult<Actor> {
    let f = File::open(path).map_err(|e| CliError::io_at(path, e))?;
    let net = Mlp::read_checkpoint(std::io::BufReader::new(f)).map_err(|e| CliError::io_at(path, e))?;
    Ok(Actor { net })
}

struct ArtifactHook<'a> {
    prepared: &'a Prepared,
    episodes: usize,
    eval_seed: u64,
    diag_every: u64,
    probe_lr: f32,
    diag_train: Tensor,
    diag_val: Tensor,
    diag_val_actions: Tensor,
    dir: PathBuf,
    eval: BufWriter<File>,
    diagnostics: BufWriter<File>,
    losses: BufWriter<File>,
    returns: Vec<f64>,
}

impl ArtifactHook<'_> {
    fn io(&self, e: std::io::Error) -> actoreg_core::Error {
        actoreg_core::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", self.dir.display())))
    }
}

impl RunHook for ArtifactHook<'_> {
    fn checkpoint(&mut self, step: u64, trainer: &Trainer) -> actoreg_core::Result<()> {
        let actor = trainer.actor();
        let returns = self.prepared.env.evaluate(self.episodes, self.eval_seed, |s| actor.act(s))?;
        let mean = returns.iter().map(|&r| r as f64).sum::<f64>() / returns.len() as f64;
        let score = normalized_score(mean, self.prepared.refs.random, self.prepared.refs.expert)?;
        self.returns.push(mean);
        writeln!(self.eval, "{step},{mean},{score}").map_err(|e| self.io(e))?;
        self.eval.flush().map_err(|e| self.io(e))?;
        let path = self.dir.join(CHECKPOINT_DIR).join(checkpoint_name(step));
        save_actor(actor, &path).map_err(|e| self.io(std::io::Error::other(e.to_string())))?;
        if self.diag_every > 0 && step.is_multiple_of(self.diag_every) {
            let input = DiagnosticsInput::new(&self.diag_train, &self.diag_val, &self.diag_val_actions, self.probe_lr);
            let report = diagnostics_ratio_report(actor, &input, step)?;
            writeln!(self.diagnostics, "{}", serde_json::to_string(&report)?).map_err(|e| self.io(e))?;
            self.diagnostics.flush().map_err(|e| self.io(e))?;
        }
        Ok(())
    }

    fn losses(&mut self, report: &LossReport) -> actoreg_core::Result<()> {
        writeln!(self.losses, "{}", serde_json::to_string(report)?).map_err(|e| self.io(e))
    }
}

/// Trains `cfg` with `seed` and writes every artifact into `dir`.
pub fn run_seed(cfg: &RunConfig, prepared: &Prepared, seed: u64, dir: &Path) -> CliResult<RunSummary> {
    let window = cfg.rar_window_for(&prepared.env)?;
    fs::create_dir_all(dir.join(CHECKPOINT_DIR)).map_err(|e| CliError::io_at(dir, e))?;

    let mut snapshot = cfg.clone();
    snapshot.seeds = vec![seed];
    snapshot.out = None;
    snapshot.dataset = fs::canonicalize(&cfg.dataset).unwrap_or_else(|_| cfg.dataset.clone());
    match snapshot.algorithm_config() {
        actoreg_core::algorithms::AlgorithmConfig::Rebrac(c) => snapshot.rebrac = Some(c),
        actoreg_core::algorithms::AlgorithmConfig::Iql(c) => snapshot.iql = Some(c),
    }
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, snapshot.to_toml()?).map_err(|e| CliError::io_at(&config_path, e))?;

    let (diag_train, _) = diagnostic_batch(&prepared.dataset, &prepared.split.train, cfg.split_seed);
    let (diag_val, diag_val_actions) = diagnostic_batch(&prepared.dataset, &prepared.split.validation, cfg.split_seed);
    let mut eval = create(&dir.join(EVAL_FILE))?;
    writeln!(eval, "step,mean_return,score")?;
    let mut hook = ArtifactHook {
        prepared,
        episodes: cfg.eval_episodes_for(&prepared.env),
        eval_seed: seed,
        diag_every: cfg.diagnostics_interval.unwrap_or(cfg.eval_interval),
        probe_lr: cfg.actor_lr(),
        diag_train,
        diag_val,
        diag_val_actions,
        dir: dir.to_path_buf(),
        eval,
        diagnostics: create(&dir.join(DIAGNOSTICS_FILE))?,
        losses: create(&dir.join(LOSSES_FILE))?,
        returns: Vec::new(),
    };
    let spec = RunSpec {
        algorithm: cfg.algorithm_config(),
        regularizer: cfg.regularizer.clone(),
        steps: cfg.steps,
        eval_interval: cfg.eval_interval,
        log_interval: cfg.log_interval,
        seed,
    };
    let result = train_run(
        &spec,
        &prepared.dataset,
        &prepared.split,
        prepared.env.default_discount(),
        &mut hook,
    );
    hook.losses.flush()?;
    let trainer = result.map_err(|e| CliError::from(e).context(&format!("run {}", dir.display())))?;
    let final_path = dir.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT);
    save_actor(trainer.actor(), &final_path).map_err(|e| CliError::io_at(&final_path, e))?;

    let rar_return = rar(&hook.returns, window)?;
    let final_return = *hook.returns.last().expect("at least one checkpoint");
    let norm = |r: f64| normalized_score(r, prepared.refs.random, prepared.refs.expert);
    let summary = RunSummary {
        algorithm: cfg.algorithm.as_str().into(),
        task: prepared.task.clone(),
        seed,
        steps: cfg.steps,
        rar_window: window,
        rar_return,
        score: norm(rar_return)?,
        final_return,
        final_score: norm(final_return)?,
    };
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| CliError::io_at(&path, e))?;
    Ok(summary)
}

/// Runs every seed of `cfg` under `root`, `jobs` at a time. All seeds run to
/// completion; the first failure in seed order is returned.
pub fn run_all(cfg: &RunConfig, root: &Path, jobs: usize) -> CliResult<Vec<RunSummary>> {
    let prepared = Prepared::load(cfg)?;
    cfg.rar_window_for(&prepared.env)?;
    let results = map_jobs(cfg.seeds.len(), jobs, |i| {
        let seed = cfg.seeds[i];
        run_seed(cfg, &prepared, seed, &run_dir(root, cfg, &prepared.task, seed))
    })?;
    results.into_iter().collect()
}
