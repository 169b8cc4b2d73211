//! Run configuration files.
//!
//! A run file is TOML with top-level run settings and one section per
//! component:
//!
//! ```toml
//! algorithm = "rebrac"
//! dataset = "data/point-dense-expert.bin"
//! seeds = [0, 1, 2]
//! steps = 50000
//! eval_interval = 2500
//!
//! [rebrac]
//! actor_bc_coef = 0.1
//!
//! [regularizer]
//! norm = "layer"
//! dropout = 0.1
//! ```
//!
//! Unknown keys are rejected and every value is checked before any compute
//! starts.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use actoreg_core::algorithms::{AlgorithmConfig, IqlConfig, RebracConfig};
use actoreg_core::data::Environment;
use actoreg_core::regularizers::{NormKind, RegularizerConfig, DEFAULT_GROUP_COUNT};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_STEPS: u64 = 50_000;
pub const DEFAULT_EVAL_INTERVAL: u64 = 2_500;
pub const DEFAULT_LOG_INTERVAL: u64 = 1_000;
pub const DEFAULT_OUT_ROOT: &str = "runs";
pub const OUT_ROOT_ENV: &str = "ACTOREG_OUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmName {
    Rebrac,
    Iql,
}

impl AlgorithmName {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmName::Rebrac => "rebrac",
            AlgorithmName::Iql => "iql",
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_steps() -> u64 {
    DEFAULT_STEPS
}

fn default_eval_interval() -> u64 {
    DEFAULT_EVAL_INTERVAL
}

fn default_log_interval() -> u64 {
    DEFAULT_LOG_INTERVAL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: AlgorithmName,
    /// Run directory name under the output root; `<algorithm>-<task>` if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Must match the dataset's environment when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<String>,
    pub dataset: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: u64,
    #[serde(default = "default_log_interval")]
    pub log_interval: u64,
    /// Diagnostics every this many steps (a multiple of `eval_interval`);
    /// every checkpoint when absent, never when 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics_interval: Option<u64>,
    /// Episodes per evaluation; the task default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_episodes: Option<usize>,
    /// Checkpoints averaged into RAR; the task default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rar_window: Option<usize>,
    /// Seed of the train/validation split, shared by all run seeds.
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rebrac: Option<RebracConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iql: Option<IqlConfig>,
    #[serde(default)]
    pub regularizer: RegularizerConfig,
}

fn describe_path(path: &serde_path_to_error::Path) -> String {
    let s = path.to_string();
    if s.is_empty() || s == "." {
        "<root>".into()
    } else {
        s
    }
}

impl RunConfig {
    /// Minimal config for `algorithm` on `dataset`, everything else default.
    pub fn new(algorithm: AlgorithmName, dataset: impl Into<PathBuf>) -> Self {
        Self {
            algorithm,
            name: None,
            env: None,
            dataset: dataset.into(),
            seeds: default_seeds(),
            steps: DEFAULT_STEPS,
            eval_interval: DEFAULT_EVAL_INTERVAL,
            log_interval: DEFAULT_LOG_INTERVAL,
            diagnostics_interval: None,
            eval_episodes: None,
            rar_window: None,
            split_seed: 0,
            out: None,
            rebrac: None,
            iql: None,
            regularizer: RegularizerConfig::default(),
        }
    }

    pub fn parse_table(text: &str) -> CliResult<toml::Table> {
        text.parse::<toml::Table>()
            .map_err(|e| CliError::config("<toml>", e.to_string().trim_end().to_string()))
    }

    /// Deserializes and validates; errors name the dotted field path.
    pub fn from_table(table: toml::Table) -> CliResult<Self> {
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table))
            .map_err(|e| CliError::config(describe_path(e.path()), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        Self::from_table(Self::parse_table(text)?)
    }

    /// Reads a config file; a relative dataset path is taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io_at(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.resolve_relative_to(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    pub fn resolve_relative_to(&mut self, dir: &Path) {
        if self.dataset.is_relative() && !dir.as_os_str().is_empty() {
            self.dataset = dir.join(&self.dataset);
        }
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Io(format!("serializing config: {e}")))
    }

    /// The active algorithm section, defaults filled in.
    pub fn algorithm_config(&self) -> AlgorithmConfig {
        match self.algorithm {
            AlgorithmName::Rebrac => AlgorithmConfig::Rebrac(self.rebrac.clone().unwrap_or_default()),
            AlgorithmName::Iql => AlgorithmConfig::Iql(self.iql.clone().unwrap_or_default()),
        }
    }

    /// Base actor learning rate (before any schedule); the plasticity
    /// probe reuses it.
    pub fn actor_lr(&self) -> f32 {
        match self.algorithm_config() {
            AlgorithmConfig::Rebrac(c) => c.actor_lr,
            AlgorithmConfig::Iql(c) => c.actor_lr,
        }
    }

    fn hidden_dim(&self) -> usize {
        match self.algorithm_config() {
            AlgorithmConfig::Rebrac(c) => c.hidden_dim,
            AlgorithmConfig::Iql(c) => c.hidden_dim,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        match (self.algorithm, &self.rebrac, &self.iql) {
            (AlgorithmName::Rebrac, _, Some(_)) => {
                return Err(CliError::config("iql", "section given but algorithm is \"rebrac\""))
            }
            (AlgorithmName::Iql, Some(_), _) => {
                return Err(CliError::config("rebrac", "section given but algorithm is \"iql\""))
            }
            _ => {}
        }
        if self.dataset.as_os_str().is_empty() {
            return Err(CliError::config("dataset", "must not be empty"));
        }
        if let Some(env) = &self.env {
            Environment::by_name(env).map_err(|e| CliError::config("env", e.to_string()))?;
        }
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds", "at least one seed is required"));
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(CliError::config("seeds", "seeds must be distinct"));
        }
        if self.steps == 0 {
            return Err(CliError::config("steps", "must be >= 1"));
        }
        if self.eval_interval == 0 || self.eval_interval > self.steps {
            return Err(CliError::config(
                "eval_interval",
                format!("must lie in [1, steps={}], got {}", self.steps, self.eval_interval),
            ));
        }
        if self.log_interval == 0 {
            return Err(CliError::config("log_interval", "must be >= 1"));
        }
        if let Some(d) = self.diagnostics_interval {
            if d % self.eval_interval != 0 {
                return Err(CliError::config(
                    "diagnostics_interval",
                    format!("must be 0 or a multiple of eval_interval={}, got {d}", self.eval_interval),
                ));
            }
        }
        if self.eval_episodes == Some(0) {
            return Err(CliError::config("eval_episodes", "must be >= 1"));
        }
        if let Some(w) = self.rar_window {
            self.check_window(w)?;
        }
        self.algorithm_config().validate()?;
        self.regularizer.validate()?;
        if self.regularizer.norm == NormKind::Group && !self.hidden_dim().is_multiple_of(DEFAULT_GROUP_COUNT) {
            return Err(CliError::config(
                "regularizer.norm",
                format!(
                    "group norm needs a hidden width divisible by {DEFAULT_GROUP_COUNT}, got {}",
                    self.hidden_dim()
                ),
            ));
        }
        Ok(())
    }

    pub fn checkpoints(&self) -> u64 {
        self.steps / self.eval_interval
    }

    fn check_window(&self, w: usize) -> CliResult<()> {
        if w == 0 {
            return Err(CliError::config("rar_window", "must be >= 1"));
        }
        if (w as u64) > self.checkpoints() {
            return Err(CliError::config(
                "rar_window",
                format!(
                    "window {w} exceeds the {} checkpoints of steps={} / eval_interval={}",
                    self.checkpoints(),
                    self.steps,
                    self.eval_interval
                ),
            ));
        }
        Ok(())
    }

    /// RAR window for `env`, checked against the checkpoint count.
    pub fn rar_window_for(&self, env: &Environment) -> CliResult<usize> {
        let w = self.rar_window.unwrap_or_else(|| env.default_rar_window());
        self.check_window(w)?;
        Ok(w)
    }

    pub fn eval_episodes_for(&self, env: &Environment) -> usize {
        self.eval_episodes.unwrap_or_else(|| env.default_eval_episodes())
    }
}

/// `--out` wins, then `ACTOREG_OUT_ROOT`, then the config's `out`, then `runs`.
pub fn resolve_out_root(flag: Option<&Path>, env_value: Option<&std::ffi::OsStr>, config: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(v) = env_value.filter(|v| !v.is_empty()) {
        return PathBuf::from(v);
    }
    config.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
}

/// Sets `dotted.path = value` inside a TOML table, creating sections.
pub fn set_dotted(table: &mut toml::Table, path: &str, value: toml::Value) -> CliResult<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(path, "malformed parameter path"));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(path, format!("{part} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
