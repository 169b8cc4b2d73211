//! Synthetic point-mass goal-reaching environments, scripted dataset
//! generation, the binary dataset format and the train/validation split.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::binio::ByteCursor;
use crate::error::{Error, FormatError, Result};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"OFRLDS1\0";
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.05;

const DAMPING: f32 = 0.8;
const ACCEL: f32 = 0.25;
const DT: f32 = 0.1;
const WORKSPACE: f32 = 1.0;
const GOAL_RADIUS: f32 = 0.1;
const EXPERT_KP: f32 = 4.0;
const EXPERT_KD: f32 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Negative distance to the goal every step.
    Dense,
    /// `reward_scale` on reaching the goal, zero otherwise.
    Sparse,
}

/// Point mass in `[−1, 1]^k` with position and velocity state (`n = 2k`)
/// and one acceleration actuator per axis (`m = k`).
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub name: String,
    pub variant: Variant,
    pub state_dim: usize,
    pub action_dim: usize,
    pub goal: Vec<f32>,
    pub horizon: usize,
    pub reward_scale: f32,
    /// Maze-type tasks use the long discount and the short RAR window.
    pub maze_like: bool,
}

/// Result of one transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub next_state: Vec<f32>,
    pub reward: f32,
    pub terminal: bool,
}

pub const ENV_NAMES: [&str; 3] = ["point-dense", "point-sparse", "point-highdim"];

/// Point-goal environment with `dims` axes.
pub fn point_goal_env(variant: Variant, dims: usize) -> Environment {
    let goal = (0..dims).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
    let name = match (variant, dims) {
        (Variant::Dense, 2) => "point-dense".to_string(),
        (Variant::Sparse, 2) => "point-sparse".to_string(),
        (Variant::Dense, 8) => "point-highdim".to_string(),
        (Variant::Dense, k) => format!("point-dense-{k}d"),
        (Variant::Sparse, k) => format!("point-sparse-{k}d"),
    };
    Environment {
        name,
        variant,
        state_dim: 2 * dims,
        action_dim: dims,
        goal,
        horizon: 100,
        reward_scale: match variant {
            Variant::Dense => 1.0,
            Variant::Sparse => 100.0,
        },
        maze_like: variant == Variant::Sparse,
    }
}

impl Environment {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "point-dense" => Ok(point_goal_env(Variant::Dense, 2)),
            "point-sparse" => Ok(point_goal_env(Variant::Sparse, 2)),
            "point-highdim" => Ok(point_goal_env(Variant::Dense, 8)),
            other => Err(Error::Config(format!(
                "unknown environment {other:?}; expected one of {ENV_NAMES:?}"
            ))),
        }
    }

    fn dims(&self) -> usize {
        self.action_dim
    }

    /// Uniform start position, zero velocity.
    pub fn reset(&self, rng: &mut Rng) -> Vec<f32> {
        let k = self.dims();
        let mut s = vec![0.0; 2 * k];
        for x in s.iter_mut().take(k) {
            *x = rng.uniform(-WORKSPACE, WORKSPACE);
        }
        s
    }

    pub fn distance_to_goal(&self, state: &[f32]) -> f32 {
        state[..self.dims()]
            .iter()
            .zip(&self.goal)
            .map(|(p, g)| (p - g) * (p - g))
            .sum::<f32>()
            .sqrt()
    }

    pub fn at_goal(&self, state: &[f32]) -> bool {
        self.distance_to_goal(state) < GOAL_RADIUS
    }

    /// Deterministic transition; actions are clipped to `[−1, 1]` first.
    pub fn step(&self, state: &[f32], action: &[f32]) -> Step {
        let k = self.dims();
        let mut next = vec![0.0; 2 * k];
        for i in 0..k {
            let a = action[i].clamp(-1.0, 1.0);
            let mut v = DAMPING * state[k + i] + ACCEL * a;
            let mut p = state[i] + DT * v;
            if p.abs() > WORKSPACE {
                p = p.clamp(-WORKSPACE, WORKSPACE);
                v = 0.0;
            }
            next[i] = p;
            next[k + i] = v;
        }
        let terminal = self.at_goal(&next);
        let reward = match self.variant {
            Variant::Dense => -self.distance_to_goal(&next) * self.reward_scale,
            Variant::Sparse => {
                if terminal {
                    self.reward_scale
                } else {
                    0.0
                }
            }
        };
        Step {
            next_state: next,
            reward,
            terminal,
        }
    }

    /// Scripted PD controller toward the goal.
    pub fn expert_action(&self, state: &[f32]) -> Vec<f32> {
        let k = self.dims();
        (0..k)
            .map(|i| (EXPERT_KP * (self.goal[i] - state[i]) - EXPERT_KD * state[k + i]).clamp(-1.0, 1.0))
            .collect()
    }

    /// Discount used by the trainers for this task.
    pub fn default_discount(&self) -> f32 {
        if self.maze_like {
            0.999
        } else {
            0.99
        }
    }

    /// RAR window: 5 checkpoints on maze-type tasks, 10 otherwise.
    pub fn default_rar_window(&self) -> usize {
        if self.maze_like {
            5
        } else {
            10
        }
    }

    /// Evaluation episodes per checkpoint: 100 on maze-type tasks, 10 otherwise.
    pub fn default_eval_episodes(&self) -> usize {
        if self.maze_like {
            100
        } else {
            10
        }
    }

    /// Runs `episodes` episodes in lockstep. `policy` maps a `[active, n]`
    /// state batch to a `[active, m]` action batch. Start states come from
    /// `Rng::stream(seed, Evaluation)`.
    pub fn evaluate<F>(&self, episodes: usize, seed: u64, mut policy: F) -> Result<Vec<f32>>
    where
        F: FnMut(&Tensor) -> Result<Tensor>,
    {
        let mut rng = Rng::stream(seed, Stream::Evaluation);
        let mut states: Vec<Vec<f32>> = (0..episodes).map(|_| self.reset(&mut rng)).collect();
        let mut returns = vec![0.0f32; episodes];
        let mut active: Vec<usize> = (0..episodes).collect();
        for _ in 0..self.horizon {
            if active.is_empty() {
                break;
            }
            let mut flat = Vec::with_capacity(active.len() * self.state_dim);
            for &e in &active {
                flat.extend_from_slice(&states[e]);
            }
            let batch = Tensor::new(&[active.len(), self.state_dim], flat)?;
            let actions = policy(&batch)?;
            if actions.rows() != active.len() || actions.cols() != self.action_dim {
                return Err(Error::Invalid(format!(
                    "policy returned shape {:?} for {} states",
                    actions.shape(),
                    active.len()
                )));
            }
            let mut still = Vec::with_capacity(active.len());
            for (row, &e) in active.iter().enumerate() {
                let st = self.step(&states[e], actions.row(row));
                returns[e] += st.reward;
                states[e] = st.next_state;
                if !st.terminal {
                    still.push(e);
                }
            }
            active = still;
        }
        Ok(returns)
    }

    /// Mean returns of the scripted controller and of uniform random actions:
    /// the anchors of score normalization.
    pub fn reference_returns(&self) -> ReferenceReturns {
        const EPISODES: usize = 100;
        const SEED: u64 = 0x5EED_A11C;
        let expert = self
            .evaluate(EPISODES, SEED, |s| {
                let data = (0..s.rows()).flat_map(|i| self.expert_action(s.row(i))).collect();
                Ok(Tensor::new(&[s.rows(), self.action_dim], data)?)
            })
            .expect("scripted rollout");
        let mut rng = Rng::stream(SEED, Stream::Policy);
        let random = self
            .evaluate(EPISODES, SEED, |s| Ok(rng.uniform_tensor(&[s.rows(), self.action_dim], -1.0, 1.0)))
            .expect("random rollout");
        let mean = |v: &[f32]| v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        ReferenceReturns {
            random: mean(&random),
            expert: mean(&expert),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceReturns {
    pub random: f64,
    pub expert: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Random,
    Medium,
    Expert,
    Mixed,
}

impl Tier {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Tier::Random),
            "medium" => Ok(Tier::Medium),
            "expert" => Ok(Tier::Expert),
            "mixed" => Ok(Tier::Mixed),
            other => Err(Error::Config(format!("unknown dataset tier {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tier::Random => "random",
            Tier::Medium => "medium",
            Tier::Expert => "expert",
            Tier::Mixed => "mixed",
        }
    }
}

const EXPERT_NOISE: f32 = 0.1;
const MEDIUM_NOISE: f32 = 0.3;
const MEDIUM_EPSILON: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env: String,
    pub tier: Tier,
    pub seed: u64,
    pub reward_scale: f32,
}

/// Columnar store of `(state, action, reward, next_state, done)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionDataset {
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub next_states: Vec<f32>,
    pub dones: Vec<bool>,
    pub meta: DatasetMeta,
}

/// A sampled minibatch as tensors; `rewards` and `dones` are `[b, 1]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Tensor,
    pub next_states: Tensor,
    pub dones: Tensor,
}

impl TransitionDataset {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f32] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn action(&self, i: usize) -> &[f32] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    pub fn next_state(&self, i: usize) -> &[f32] {
        &self.next_states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let (n, m, b) = (self.state_dim, self.action_dim, indices.len());
        let mut s = Vec::with_capacity(b * n);
        let mut a = Vec::with_capacity(b * m);
        let mut ns = Vec::with_capacity(b * n);
        let mut r = Vec::with_capacity(b);
        let mut d = Vec::with_capacity(b);
        for &i in indices {
            s.extend_from_slice(self.state(i));
            a.extend_from_slice(self.action(i));
            ns.extend_from_slice(self.next_state(i));
            r.push(self.rewards[i]);
            d.push(if self.dones[i] { 1.0 } else { 0.0 });
        }
        Batch {
            states: Tensor::new(&[b, n], s).expect("states"),
            actions: Tensor::new(&[b, m], a).expect("actions"),
            rewards: Tensor::new(&[b, 1], r).expect("rewards"),
            next_states: Tensor::new(&[b, n], ns).expect("next states"),
            dones: Tensor::new(&[b, 1], d).expect("dones"),
        }
    }

    /// Returns of the stored episodes; an episode ends at a terminal flag or
    /// where the next stored state does not continue the trajectory.
    pub fn episode_returns(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut acc = 0.0f64;
        for i in 0..self.len() {
            acc += self.rewards[i] as f64;
            let boundary = self.dones[i] || i + 1 == self.len() || self.next_state(i) != self.state(i + 1);
            if boundary {
                out.push(acc);
                acc = 0.0;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        let n = self.len();
        if n == 0 {
            return Err(FormatError::Empty);
        }
        let ok = self.states.len() == n * self.state_dim
            && self.next_states.len() == n * self.state_dim
            && self.actions.len() == n * self.action_dim
            && self.dones.len() == n;
        if !ok {
            return Err(FormatError::Invalid("column lengths disagree".into()));
        }
        if !self.rewards.iter().all(|r| r.is_finite()) {
            return Err(FormatError::Invalid("non-finite reward".into()));
        }
        if !self.actions.iter().all(|a| (-1.0..=1.0).contains(a)) {
            return Err(FormatError::Invalid("action outside [-1, 1]".into()));
        }
        Ok(())
    }

    fn concat(mut self, other: TransitionDataset) -> Self {
        self.states.extend(other.states);
        self.actions.extend(other.actions);
        self.rewards.extend(other.rewards);
        self.next_states.extend(other.next_states);
        self.dones.extend(other.dones);
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(
            32 + 4 * (self.states.len() * 2 + self.actions.len() + self.rewards.len()) + self.len() + 4,
        );
        buf.extend_from_slice(DATASET_MAGIC);
        for v in [self.state_dim, self.action_dim, self.len()] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for col in [&self.states, &self.actions, &self.rewards, &self.next_states] {
            for x in col.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf.extend(self.dones.iter().map(|&d| d as u8));
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8], meta: DatasetMeta) -> Result<Self, FormatError> {
        let mut cur = ByteCursor::new(bytes);
        let magic = cur.take(8, "magic")?;
        if magic != DATASET_MAGIC {
            return Err(FormatError::BadMagic {
                expected: DATASET_MAGIC.to_vec(),
                found: magic.to_vec(),
            });
        }
        let n = cur.u64("header")? as usize;
        let m = cur.u64("header")? as usize;
        let count = cur.u64("header")? as usize;
        if count == 0 {
            return Err(FormatError::Empty);
        }
        let mut floats = |len: usize, section: &str| -> Result<Vec<f32>, FormatError> {
            let raw = cur.take(len.checked_mul(4).ok_or(FormatError::Invalid("size overflow".into()))?, section)?;
            Ok(raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect())
        };
        let states = floats(count * n, "states")?;
        let actions = floats(count * m, "actions")?;
        let rewards = floats(count, "rewards")?;
        let next_states = floats(count * n, "next_states")?;
        let dones: Vec<bool> = cur.take(count, "dones")?.iter().map(|&b| b != 0).collect();
        let body_end = cur.position();
        let stored = cur.u32("checksum")?;
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed });
        }
        if !cur.is_done() {
            return Err(FormatError::Invalid("trailing bytes after checksum".into()));
        }
        let ds = Self {
            state_dim: n,
            action_dim: m,
            states,
            actions,
            rewards,
            next_states,
            dones,
            meta,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// `<dir>/<stem>.meta.json` next to the dataset file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

pub fn save_dataset(ds: &TransitionDataset, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, ds.to_bytes())?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&ds.meta)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<TransitionDataset> {
    let bytes = fs::read(path)?;
    let side = sidecar_path(path);
    let meta_text = fs::read_to_string(&side)
        .map_err(|e| FormatError::Invalid(format!("metadata sidecar {}: {e}", side.display())))?;
    let meta: DatasetMeta =
        serde_json::from_str(&meta_text).map_err(|e| FormatError::Invalid(format!("metadata sidecar: {e}")))?;
    Ok(TransitionDataset::from_bytes(&bytes, meta)?)
}

/// Rolls out the tier's behavior policy until `size` transitions are collected.
pub fn generate_dataset(env: &Environment, tier: Tier, size: usize, seed: u64) -> Result<TransitionDataset> {
    if size < 100 {
        return Err(Error::Config(format!("dataset size must be >= 100, got {size}")));
    }
    if tier == Tier::Mixed {
        let half = size / 2;
        let random = collect(env, Tier::Random, half, seed, 0);
        let medium = collect(env, Tier::Medium, size - half, seed, 1);
        let mut ds = random.concat(medium);
        ds.meta.tier = Tier::Mixed;
        return Ok(ds);
    }
    Ok(collect(env, tier, size, seed, 0))
}

fn collect(env: &Environment, tier: Tier, size: usize, seed: u64, part: u64) -> TransitionDataset {
    let mut env_rng = Rng::new(seed, Stream::Environment as u64 + 100 * part);
    let mut pol_rng = Rng::new(seed, Stream::Policy as u64 + 100 * part);
    let (n, m) = (env.state_dim, env.action_dim);
    let mut ds = TransitionDataset {
        state_dim: n,
        action_dim: m,
        states: Vec::with_capacity(size * n),
        actions: Vec::with_capacity(size * m),
        rewards: Vec::with_capacity(size),
        next_states: Vec::with_capacity(size * n),
        dones: Vec::with_capacity(size),
        meta: DatasetMeta {
            env: env.name.clone(),
            tier,
            seed,
            reward_scale: env.reward_scale,
        },
    };
    'outer: loop {
        let mut s = env.reset(&mut env_rng);
        for _ in 0..env.horizon {
            let a = behavior_action(env, tier, &s, &mut pol_rng);
            let st = env.step(&s, &a);
            ds.states.extend_from_slice(&s);
            ds.actions.extend_from_slice(&a);
            ds.rewards.push(st.reward);
            ds.next_states.extend_from_slice(&st.next_state);
            ds.dones.push(st.terminal);
            if ds.rewards.len() == size {
                break 'outer;
            }
            if st.terminal {
                break;
            }
            s = st.next_state;
        }
    }
    ds
}

fn behavior_action(env: &Environment, tier: Tier, s: &[f32], rng: &mut Rng) -> Vec<f32> {
    let m = env.action_dim;
    let uniform = |rng: &mut Rng| (0..m).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<f32>>();
    let noisy = |rng: &mut Rng, sigma: f32| {
        env.expert_action(s)
            .into_iter()
            .map(|a| (a + sigma * rng.normal()).clamp(-1.0, 1.0))
            .collect::<Vec<f32>>()
    };
    match tier {
        Tier::Random => uniform(rng),
        Tier::Expert => noisy(rng, EXPERT_NOISE),
        Tier::Medium | Tier::Mixed => {
            if rng.bernoulli(MEDIUM_EPSILON) {
                uniform(rng)
            } else {
                noisy(rng, MEDIUM_NOISE)
            }
        }
    }
}

/// Disjoint train/validation index sets.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Uniformly random partition with `floor(len·fraction)` validation indices.
pub fn split(len: usize, fraction: f64, seed: u64) -> Result<SplitDataset> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::Config(format!("split fraction must lie in (0, 0.5], got {fraction}")));
    }
    let k = (len as f64 * fraction).floor() as usize;
    if k < 1 {
        return Err(Error::Config(format!(
            "split of {len} transitions at fraction {fraction} leaves no validation data"
        )));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    Rng::stream(seed, Stream::Split).shuffle(&mut idx);
    let mut validation = idx[..k].to_vec();
    let mut train = idx[k..].to_vec();
    validation.sort_unstable();
    train.sort_unstable();
    Ok(SplitDataset { train, validation })
}

impl SplitDataset {
    /// Every index in training (no held-out data).
    pub fn full(len: usize) -> Self {
        Self {
            train: (0..len).collect(),
            validation: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_reward_at_goal() {
        let env = point_goal_env(Variant::Sparse, 2);
        let mut s = env.goal.clone();
        s.extend([0.0, 0.0]);
        let st = env.step(&s, &[0.0, 0.0]);
        assert_eq!(st.reward, 100.0);
        assert!(st.terminal);
    }

    #[test]
    fn null_action_from_rest_keeps_position() {
        let env = point_goal_env(Variant::Dense, 2);
        let s = vec![-0.3, 0.7, 0.0, 0.0];
        assert_eq!(env.step(&s, &[0.0, 0.0]).next_state, s);
    }

    #[test]
    fn actions_are_clipped() {
        let env = point_goal_env(Variant::Dense, 2);
        let s = vec![0.0, 0.0, 0.0, 0.0];
        assert_eq!(env.step(&s, &[5.0, -7.0]), env.step(&s, &[1.0, -1.0]));
    }

    #[test]
    fn scripted_controller_reaches_goal_from_everywhere() {
        for env in [point_goal_env(Variant::Dense, 2), point_goal_env(Variant::Dense, 8)] {
            let k = env.action_dim;
            let mut rng = Rng::new(0, 0);
            let mut starts: Vec<Vec<f32>> = (0..200).map(|_| env.reset(&mut rng)).collect();
            for corner in 0..(1usize << k.min(4)) {
                let mut s: Vec<f32> = (0..k).map(|i| if corner >> (i % 4) & 1 == 1 { 1.0 } else { -1.0 }).collect();
                s.extend(vec![0.0; k]);
                starts.push(s);
            }
            for start in starts {
                let mut s = start.clone();
                let mut reached = false;
                for _ in 0..env.horizon {
                    let st = env.step(&s, &env.expert_action(&s));
                    s = st.next_state;
                    if st.terminal {
                        reached = true;
                        break;
                    }
                }
                assert!(reached, "{} from {start:?}", env.name);
            }
        }
    }

    #[test]
    fn reference_anchors_are_ordered() {
        for name in ENV_NAMES {
            let r = Environment::by_name(name).unwrap().reference_returns();
            assert!(r.random < r.expert, "{name}: {r:?}");
        }
    }

    #[test]
    fn split_sizes_and_partition() {
        let s = split(1000, 0.05, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (950, 50));
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        let other = split(1000, 0.05, 4).unwrap();
        assert_eq!(other.validation.len(), 50);
        assert_ne!(other.validation, s.validation);
        assert!(split(10, 0.05, 0).is_err());
        assert!(split(1000, 0.6, 0).is_err());
    }

    #[test]
    fn small_datasets_are_rejected() {
        let env = point_goal_env(Variant::Dense, 2);
        assert!(generate_dataset(&env, Tier::Expert, 99, 0).is_err());
    }

    #[test]
    fn truncated_bytes_name_the_section() {
        let env = point_goal_env(Variant::Dense, 2);
        let ds = generate_dataset(&env, Tier::Random, 100, 0).unwrap();
        let bytes = ds.to_bytes();
        let cut = &bytes[..8 + 24 + 100 * 4 * 4 + 10];
        match TransitionDataset::from_bytes(cut, ds.meta.clone()) {
            Err(FormatError::Truncated { section }) => assert_eq!(section, "actions"),
            other => panic!("{other:?}"),
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(
            TransitionDataset::from_bytes(&flipped, ds.meta.clone()),
            Err(FormatError::Checksum { .. })
        ));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(
            TransitionDataset::from_bytes(&magic, ds.meta.clone()),
            Err(FormatError::BadMagic { .. })
        ));
    }

    #[test]
    fn empty_file_rejected() {
        let mut bytes = DATASET_MAGIC.to_vec();
        for v in [4u64, 2, 0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        let meta = DatasetMeta {
            env: "point-dense".into(),
            tier: Tier::Random,
            seed: 0,
            reward_scale: 1.0,
        };
        assert!(matches!(TransitionDataset::from_bytes(&bytes, meta), Err(FormatError::Empty)));
    }
}
