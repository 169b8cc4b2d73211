//! Score normalization, running-average returns, aggregate metrics with
//! stratified bootstrap intervals, probability of improvement, performance
//! profiles, and noisy-inference robustness.

use serde::{Deserialize, Serialize};

use crate::data::Environment;
use crate::error::{Error, Result};
use crate::networks::Actor;
use crate::par;
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

pub const BOOTSTRAP_RESAMPLES: usize = 2000;
pub const CONFIDENCE: f64 = 0.95;
pub const ACTION_NOISE_STD: f32 = 0.2;
pub const OBSERVATION_NOISE_STD: f32 = 0.05;
pub const ROBUSTNESS_RATIO_CAP: f64 = 1.1;

pub fn normalized_score(raw: f64, random_ref: f64, expert_ref: f64) -> Result<f64> {
    if !(expert_ref > random_ref) || !random_ref.is_finite() || !expert_ref.is_finite() {
        return Err(Error::Invalid(format!(
            "degenerate score references: random {random_ref}, expert {expert_ref}"
        )));
    }
    Ok(100.0 * (raw - random_ref) / (expert_ref - random_ref))
}

/// Per-checkpoint mean returns of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSeries {
    pub steps: Vec<u64>,
    pub returns: Vec<f64>,
}

impl EvalSeries {
    pub fn push(&mut self, step: u64, mean_return: f64) {
        self.steps.push(step);
        self.returns.push(mean_return);
    }

    pub fn rar(&self, window: usize) -> Result<f64> {
        rar(&self.returns, window)
    }
}

/// Mean of the last `window` checkpoint values.
pub fn rar(series: &[f64], window: usize) -> Result<f64> {
    if window == 0 || series.len() < window {
        return Err(Error::Invalid(format!(
            "running average over {window} checkpoints needs at least that many, got {}",
            series.len()
        )));
    }
    let tail = &series[series.len() - window..];
    Ok(tail.iter().sum::<f64>() / window as f64)
}

/// Normalized scores of one algorithm, `runs × tasks`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub algorithm: String,
    pub tasks: Vec<String>,
    /// `scores[run][task]`
    pub scores: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(algorithm: impl Into<String>, tasks: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self> {
        if scores.is_empty() || tasks.is_empty() {
            return Err(Error::Invalid("score matrix needs at least one run and one task".into()));
        }
        for (r, row) in scores.iter().enumerate() {
            if row.len() != tasks.len() {
                return Err(Error::Invalid(format!(
                    "run {r} has {} scores for {} tasks",
                    row.len(),
                    tasks.len()
                )));
            }
            if let Some(x) = row.iter().find(|x| !x.is_finite()) {
                return Err(Error::Invalid(format!("run {r} has non-finite score {x}")));
            }
        }
        Ok(Self {
            algorithm: algorithm.into(),
            tasks,
            scores,
        })
    }

    pub fn runs(&self) -> usize {
        self.scores.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.scores.iter().flatten().copied().collect()
    }

    /// Resamples run indices independently within each task.
    fn stratified_resample(&self, rng: &mut Rng) -> Vec<Vec<f64>> {
        let n = self.runs();
        let mut out = vec![vec![0.0; self.tasks.len()]; n];
        for t in 0..self.tasks.len() {
            for row in out.iter_mut() {
                row[t] = self.scores[rng.below(n)][t];
            }
        }
        out
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn median_of(v: &[f64]) -> f64 {
    let s = sorted(v.to_vec());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn mean_of(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean after dropping `floor(n/4)` values from each end of the sorted list.
pub fn iqm(values: &[f64]) -> f64 {
    let s = sorted(values.to_vec());
    let k = s.len() / 4;
    mean_of(&s[k..s.len() - k])
}

/// Median over tasks of the per-task mean over runs.
pub fn median_score(scores: &[Vec<f64>]) -> f64 {
    let tasks = scores[0].len();
    let per_task: Vec<f64> = (0..tasks)
        .map(|t| mean_of(&scores.iter().map(|r| r[t]).collect::<Vec<_>>()))
        .collect();
    median_of(&per_task)
}

/// Mean of `max(0, 1 − s/100)` over all entries, accumulated in score
/// units so integer scores are summed exactly.
pub fn optimality_gap(values: &[f64]) -> f64 {
    let shortfall: f64 = values.iter().map(|s| (100.0 - s).max(0.0)).sum();
    shortfall / (100.0 * values.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub median: Estimate,
    pub iqm: Estimate,
    pub mean: Estimate,
    pub optimality_gap: Estimate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: BOOTSTRAP_RESAMPLES,
            confidence: CONFIDENCE,
            seed: 0,
        }
    }
}

fn resample_rng(seed: u64, i: usize) -> Rng {
    Rng::new(seed, ((Stream::Bootstrap as u64) << 32) | i as u64)
}

/// Linear-interpolated percentile of sorted data, `q ∈ [0, 1]`.
pub fn percentile(sorted_values: &[f64], q: f64) -> f64 {
    let n = sorted_values.len();
    if n == 1 {
        return sorted_values[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted_values[lo] + frac * (sorted_values[hi] - sorted_values[lo])
}

fn interval(point: f64, samples: Vec<f64>, confidence: f64) -> Estimate {
    let s = sorted(samples);
    let tail = (1.0 - confidence) / 2.0;
    Estimate {
        point,
        ci_low: percentile(&s, tail),
        ci_high: percentile(&s, 1.0 - tail),
    }
}

fn point_metrics(scores: &[Vec<f64>]) -> [f64; 4] {
    let flat: Vec<f64> = scores.iter().flatten().copied().collect();
    [median_score(scores), iqm(&flat), mean_of(&flat), optimality_gap(&flat)]
}

/// Point estimates with stratified-bootstrap percentile intervals.
pub fn aggregate_metrics(m: &ScoreMatrix, cfg: &BootstrapConfig) -> Result<AggregateMetrics> {
    if cfg.resamples == 0 {
        return Err(Error::Config("bootstrap resamples must be >= 1".into()));
    }
    let point = point_metrics(&m.scores);
    let draws = par::map_range(cfg.resamples, |i| point_metrics(&m.stratified_resample(&mut resample_rng(cfg.seed, i))));
    let pick = |k: usize| interval(point[k], draws.iter().map(|d| d[k]).collect(), cfg.confidence);
    Ok(AggregateMetrics {
        median: pick(0),
        iqm: pick(1),
        mean: pick(2),
        optimality_gap: pick(3),
    })
}

fn mann_whitney(a: &[f64], b: &[f64]) -> f64 {
    let mut wins = 0.0;
    for x in a {
        for y in b {
            if x > y {
                wins += 1.0;
            } else if x == y {
                wins += 0.5;
            }
        }
    }
    wins / (a.len() * b.len()) as f64
}

fn poi_point(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let tasks = a[0].len();
    let total: f64 = (0..tasks)
        .map(|t| {
            let ca: Vec<f64> = a.iter().map(|r| r[t]).collect();
            let cb: Vec<f64> = b.iter().map(|r| r[t]).collect();
            mann_whitney(&ca, &cb)
        })
        .sum();
    total / tasks as f64
}

/// `P(A > B)` averaged over tasks, ties counted half.
pub fn probability_of_improvement(a: &ScoreMatrix, b: &ScoreMatrix, cfg: &BootstrapConfig) -> Result<Estimate> {
    if a.tasks != b.tasks {
        return Err(Error::Invalid(format!(
            "task sets differ: {:?} vs {:?}",
            a.tasks, b.tasks
        )));
    }
    let point = poi_point(&a.scores, &b.scores);
    let draws = par::map_range(cfg.resamples, |i| {
        let mut rng = resample_rng(cfg.seed, i);
        let ra = a.stratified_resample(&mut rng);
        let rb = b.stratified_resample(&mut rng);
        poi_point(&ra, &rb)
    });
    Ok(interval(point, draws, cfg.confidence))
}

/// For each threshold, the fraction of scores/100 strictly above it.
pub fn performance_profile(m: &ScoreMatrix, thresholds: &[f64]) -> Result<Vec<f64>> {
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Invalid("profile thresholds must be ascending".into()));
    }
    let flat = m.flat();
    let n = flat.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&tau| flat.iter().filter(|&&s| s / 100.0 > tau).count() as f64 / n)
        .collect())
}

/// Evenly spaced thresholds from `lo` to `hi` inclusive.
pub fn threshold_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![lo];
    }
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    Action,
    Observation,
}

impl NoiseMode {
    pub fn default_sigma(self) -> f32 {
        match self {
            NoiseMode::Action => ACTION_NOISE_STD,
            NoiseMode::Observation => OBSERVATION_NOISE_STD,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "action" => Ok(NoiseMode::Action),
            "observation" => Ok(NoiseMode::Observation),
            other => Err(Error::Config(format!("noise mode must be action or observation, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessResult {
    pub mode: NoiseMode,
    pub sigma: f32,
    pub clean_return: f64,
    pub noisy_return: f64,
    pub clean_score: f64,
    pub noisy_score: f64,
    /// `noisy_score / clean_score` capped at 1.1; absent when the clean
    /// score is not positive.
    pub ratio: Option<f64>,
}

fn mean_return(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64
}

/// Clean and noisy evaluations over the same start states. The ratio is
/// taken on normalized scores.
pub fn robustness_eval(
    actor: &Actor,
    env: &Environment,
    mode: NoiseMode,
    sigma: f32,
    episodes: usize,
    seed: u64,
) -> Result<RobustnessResult> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if episodes == 0 {
        return Err(Error::Config("episodes must be >= 1".into()));
    }
    let clean = env.evaluate(episodes, seed, |s| actor.act(s))?;
    let mut rng = Rng::stream(seed, Stream::Policy);
    let noisy = env.evaluate(episodes, seed, |s: &Tensor| {
        if sigma == 0.0 {
            return actor.act(s);
        }
        match mode {
            NoiseMode::Action => {
                let mut a = actor.act(s)?;
                for x in a.data_mut() {
                    *x = (*x + sigma * rng.normal()).clamp(-1.0, 1.0);
                }
                Ok(a)
            }
            NoiseMode::Observation => {
                let mut obs = s.clone();
                for x in obs.data_mut() {
                    *x += sigma * rng.normal();
                }
                actor.act(&obs)
            }
        }
    })?;
    let refs = env.reference_returns();
    let (cr, nr) = (mean_return(&clean), mean_return(&noisy));
    let cs = normalized_score(cr, refs.random, refs.expert)?;
    let ns = normalized_score(nr, refs.random, refs.expert)?;
    let ratio = if cs > 0.0 {
        Some((ns / cs).min(ROBUSTNESS_RATIO_CAP))
    } else {
        None
    };
    Ok(RobustnessResult {
        mode,
        sigma,
        clean_return: cr,
        noisy_return: nr,
        clean_score: cs,
        noisy_score: ns,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_task(algo: &str, runs: &[f64]) -> ScoreMatrix {
        ScoreMatrix::new(algo, vec!["t".into()], runs.iter().map(|&x| vec![x]).collect()).unwrap()
    }

    #[test]
    fn normalization_anchors() {
        assert_eq!(normalized_score(5.0, 1.0, 5.0).unwrap(), 100.0);
        assert_eq!(normalized_score(1.0, 1.0, 5.0).unwrap(), 0.0);
        assert_eq!(normalized_score(3.0, 1.0, 5.0).unwrap(), 50.0);
        assert!(normalized_score(3.0, 5.0, 5.0).is_err());
    }

    #[test]
    fn rar_windows() {
        assert_eq!(rar(&[10.0, 20.0, 30.0], 2).unwrap(), 25.0);
        assert_eq!(rar(&[10.0, 20.0, 30.0], 3).unwrap(), 20.0);
        assert!(rar(&[10.0], 2).is_err());
    }

    #[test]
    fn worked_examples() {
        let v: Vec<f64> = (1..=8).map(|x| x as f64).collect();
        assert_eq!(iqm(&v), 4.5);
        assert_eq!(optimality_gap(&[50.0, 150.0]), 0.25);
        let c = ScoreMatrix::new("c", vec!["a".into(), "b".into()], vec![vec![7.0, 7.0]; 3]).unwrap();
        let m = aggregate_metrics(&c, &BootstrapConfig { resamples: 50, ..Default::default() }).unwrap();
        for e in [m.median, m.iqm, m.mean] {
            assert_eq!((e.point, e.ci_low, e.ci_high), (7.0, 7.0, 7.0));
        }
    }

    #[test]
    fn poi_examples() {
        let cfg = BootstrapConfig { resamples: 100, ..Default::default() };
        let a = one_task("a", &[1.0, 3.0]);
        let b = one_task("b", &[2.0, 2.0]);
        assert_eq!(probability_of_improvement(&a, &b, &cfg).unwrap().point, 0.5);
        assert_eq!(probability_of_improvement(&a, &a, &cfg).unwrap().point, 0.5);
        let hi = one_task("h", &[5.0, 6.0]);
        assert_eq!(probability_of_improvement(&hi, &b, &cfg).unwrap().point, 1.0);
        let other = ScoreMatrix::new("o", vec!["u".into()], vec![vec![1.0]]).unwrap();
        assert!(probability_of_improvement(&a, &other, &cfg).is_err());
    }

    #[test]
    fn profile_examples() {
        let m = one_task("a", &[20.0, 60.0, 100.0]);
        let p = performance_profile(&m, &[0.0, 0.5, 1.0, 2.0]).unwrap();
        assert_eq!(p, vec![1.0, 2.0 / 3.0, 0.0, 0.0]);
        assert!(performance_profile(&m, &[0.5, 0.1]).is_err());
    }

    #[test]
    fn bootstrap_is_deterministic_and_parallel_safe() {
        let m = ScoreMatrix::new(
            "a",
            vec!["x".into(), "y".into()],
            vec![vec![10.0, 80.0], vec![40.0, 95.0], vec![55.0, 30.0]],
        )
        .unwrap();
        let cfg = BootstrapConfig::default();
        assert_eq!(aggregate_metrics(&m, &cfg).unwrap(), aggregate_metrics(&m, &cfg).unwrap());
        let seq: Vec<[f64; 4]> =
            par::map_range_sequential(cfg.resamples, |i| point_metrics(&m.stratified_resample(&mut resample_rng(0, i))));
        let par_draws: Vec<[f64; 4]> =
            par::map_range(cfg.resamples, |i| point_metrics(&m.stratified_resample(&mut resample_rng(0, i))));
        assert_eq!(seq, par_draws);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[0.0, 10.0], 0.25), 2.5);
        assert_eq!(percentile(&[3.0], 0.9), 3.0);
    }
}
