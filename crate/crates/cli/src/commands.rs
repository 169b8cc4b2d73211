use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use actoreg_core::data::{generate_dataset, save_dataset, Environment, Tier};
use actoreg_core::diagnostics::{diagnostic_batch, diagnostics_ratio_report, DiagnosticsInput, DiagnosticsReport};
use actoreg_core::stats::{robustness_eval, BootstrapConfig, NoiseMode, RobustnessResult, BOOTSTRAP_RESAMPLES};
use clap::{Args, Parser, Subcommand};

use crate::config::{resolve_out_root, RunConfig};
use crate::error::{CliError, CliResult};
use crate::report::report;
use crate::run::{read_actor, run_all, Prepared, CHECKPOINT_DIR, CONFIG_FILE, FINAL_CHECKPOINT};
use crate::sweep::{sweep, SweepSpec, TrainingRunner};

#[derive(Debug, Parser)]
#[command(name = "actoreg", version, about = "Offline actor-critic runs with actor regularizers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out a behavior policy and save the transitions.
    GenData(GenDataArgs),
    /// Train one config over its seeds.
    Run(RunArgs),
    /// Grid sweep over tuning seeds, winner re-run on evaluation seeds.
    Sweep(SweepArgs),
    /// Score tables and aggregate metrics over finished runs.
    Report(ReportArgs),
    /// Actor diagnostics for a checkpoint of a run.
    Diagnose(DiagnoseArgs),
    /// Clean versus noisy evaluation of a checkpoint of a run.
    Robustness(RobustnessArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub env: String,
    /// random | medium | expert | mixed
    #[arg(long)]
    pub tier: String,
    #[arg(long, default_value_t = 20_000)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset file to write; metadata goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Run only this seed.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output root.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output root.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories (searched recursively) or scores.csv files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = BOOTSTRAP_RESAMPLES)]
    pub resamples: usize,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Defaults to the run's final checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// action | observation; both when absent.
    #[arg(long)]
    pub mode: Option<String>,
    /// Noise scale; the mode's default when absent.
    #[arg(long, requires = "mode")]
    pub sigma: Option<f32>,
    /// Episodes per pass; the task default when absent.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to `<run>/robustness.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs one parsed command. `env_out_root` is the value of
/// `ACTOREG_OUT_ROOT`, passed in so callers control the environment.
pub fn execute(cli: Cli, env_out_root: Option<OsString>) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Run(a) => run_command(&a, env_out_root),
        Command::Sweep(a) => sweep_command(&a, env_out_root),
        Command::Report(a) => {
            let cfg = BootstrapConfig {
                resamples: a.resamples,
                seed: a.seed,
                ..Default::default()
            };
            let m = report(&a.inputs, &a.out, &cfg)?;
            println!("report: {} algorithm(s) -> {}", m.algorithms.len(), a.out.display());
            Ok(())
        }
        Command::Diagnose(a) => {
            let r = diagnose(&a.run, a.checkpoint.as_deref())?;
            let text = serde_json::to_string_pretty(&r)?;
            if let Some(out) = &a.out {
                fs::write(out, &text).map_err(|e| CliError::io_at(out, e))?;
            }
            println!("{text}");
            Ok(())
        }
        Command::Robustness(a) => {
            let results = robustness(&a)?;
            let text = serde_json::to_string_pretty(&results)?;
            let out = a.out.clone().unwrap_or_else(|| a.run.join("robustness.json"));
            fs::write(&out, &text).map_err(|e| CliError::io_at(&out, e))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    let env = Environment::by_name(&a.env).map_err(|e| CliError::config("--env", e.to_string()))?;
    let tier = Tier::parse(&a.tier).map_err(|e| CliError::config("--tier", e.to_string()))?;
    let ds = generate_dataset(&env, tier, a.size, a.seed)?;
    save_dataset(&ds, &a.out).map_err(|e| CliError::io_at(&a.out, e))?;
    println!("gen-data: {} transitions of {}-{} -> {}", ds.len(), env.name, tier.name(), a.out.display());
    Ok(())
}

fn run_command(a: &RunArgs, env_out_root: Option<OsString>) -> CliResult<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seeds = vec![s];
    } else if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    }
    cfg.validate().map_err(|e| match e {
        CliError::Config { path, message } if path == "seeds" => CliError::config("--seeds", message),
        other => other,
    })?;
    let root = resolve_out_root(a.out.as_deref(), env_out_root.as_deref(), cfg.out.as_deref());
    let summaries = run_all(&cfg, &root, a.jobs)?;
    for s in &summaries {
        println!("run: {} {} seed {} score {:.2} (final {:.2})", s.algorithm, s.task, s.seed, s.score, s.final_score);
    }
    Ok(())
}

fn sweep_command(a: &SweepArgs, env_out_root: Option<OsString>) -> CliResult<()> {
    let spec = SweepSpec::load(&a.config)?;
    let root = resolve_out_root(a.out.as_deref(), env_out_root.as_deref(), spec.base.out.as_deref());
    let name = spec.base.name.clone().unwrap_or_else(|| {
        let stem = spec.base.dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        format!("sweep-{}-{stem}", spec.base.algorithm.as_str())
    });
    let runner = TrainingRunner::new(&spec.base)?;
    let out = root.join(name);
    let outcome = sweep(&spec, &runner, &out, a.jobs)?;
    println!(
        "sweep: winner {} tuning {:.2} evaluation {} -> {}",
        outcome.winner_label,
        outcome.points[outcome.winner].mean_score.unwrap_or(f64::NAN),
        outcome
            .evaluation_mean
            .map(|m| format!("{m:.2}"))
            .unwrap_or_else(|| "n/a".into()),
        out.display()
    );
    Ok(())
}

fn checkpoint_step(path: &Path, cfg: &RunConfig) -> u64 {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("step-"))
        .and_then(|s| s.parse().ok())
        .unwrap_or(cfg.steps)
}

fn load_run(run: &Path, checkpoint: Option<&Path>) -> CliResult<(RunConfig, Prepared, actoreg_core::networks::Actor, u64)> {
    let cfg = RunConfig::load(&run.join(CONFIG_FILE))?;
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT));
    let actor = read_actor(&path)?;
    let prepared = Prepared::load(&cfg)?;
    let step = checkpoint_step(&path, &cfg);
    Ok((cfg, prepared, actor, step))
}

/// Diagnostics of a run's checkpoint on its own train/validation split.
pub fn diagnose(run: &Path, checkpoint: Option<&Path>) -> CliResult<DiagnosticsReport> {
    let (cfg, prepared, actor, step) = load_run(run, checkpoint)?;
    let (train, _) = diagnostic_batch(&prepared.dataset, &prepared.split.train, cfg.split_seed);
    let (val, val_actions) = diagnostic_batch(&prepared.dataset, &prepared.split.validation, cfg.split_seed);
    let input = DiagnosticsInput::new(&train, &val, &val_actions, cfg.actor_lr());
    Ok(diagnostics_ratio_report(&actor, &input, step)?)
}

pub fn robustness(a: &RobustnessArgs) -> CliResult<Vec<RobustnessResult>> {
    let (cfg, prepared, actor, _) = load_run(&a.run, a.checkpoint.as_deref())?;
    let modes = match &a.mode {
        Some(m) => vec![NoiseMode::parse(m).map_err(|e| CliError::config("--mode", e.to_string()))?],
        None => vec![NoiseMode::Action, NoiseMode::Observation],
    };
    let episodes = a.episodes.unwrap_or_else(|| cfg.eval_episodes_for(&prepared.env));
    modes
        .into_iter()
        .map(|mode| {
            let sigma = a.sigma.unwrap_or_else(|| mode.default_sigma());
            robustness_eval(&actor, &prepared.env, mode, sigma, episodes, a.seed).map_err(|e| match e {
                actoreg_core::Error::Config(m) => CliError::config("--sigma", m),
                other => other.into(),
            })
        })
        .collect()
}
