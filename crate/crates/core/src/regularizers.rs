//! Actor regularizers: elastic-net weight penalty, inverted dropout, the
//! normalization layers, spectral normalization and the three noise injectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_GRADIENT_NOISE_DECAY: f32 = 0.55;
pub const DEFAULT_GROUP_COUNT: usize = 8;
pub const FEATURE_NORM_MOMENTUM: f32 = 0.99;
pub const NORM_EPS: f32 = 1e-5;
pub const SPECTRAL_SIGMA_FLOOR: f32 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    None,
    Layer,
    Feature,
    Group,
    Spectral,
}

impl NormKind {
    pub const ALL: [NormKind; 5] = [
        NormKind::None,
        NormKind::Layer,
        NormKind::Feature,
        NormKind::Group,
        NormKind::Spectral,
    ];

    pub fn code(self) -> u8 {
        match self {
            NormKind::None => 0,
            NormKind::Layer => 1,
            NormKind::Feature => 2,
            NormKind::Group => 3,
            NormKind::Spectral => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            NormKind::None => "none",
            NormKind::Layer => "layer",
            NormKind::Feature => "feature",
            NormKind::Group => "group",
            NormKind::Spectral => "spectral",
        }
    }

    /// Whether the kind inserts a normalization layer after the activation
    /// (spectral normalization reparameterizes weights instead).
    pub fn is_activation_norm(self) -> bool {
        matches!(self, NormKind::Layer | NormKind::Feature | NormKind::Group)
    }
}

/// Named weight-decay modes selected by the mixing coefficient α.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightDecayMode {
    L2,
    ElasticNet,
    L1,
}

/// Which actor regularizers are active and with what strength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizerConfig {
    /// ω, overall weight-decay strength.
    pub weight_decay: f32,
    /// α, L1 share of the penalty (0 → L2, 0.5 → elastic net, 1 → L1).
    pub weight_decay_alpha: f32,
    pub dropout: f32,
    pub norm: NormKind,
    pub input_noise: f32,
    pub objective_noise: f32,
    pub gradient_noise: f32,
    /// γ in ν_gr / (1 + t)^γ.
    pub gradient_noise_decay: f32,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            weight_decay: 0.0,
            weight_decay_alpha: 0.0,
            dropout: 0.0,
            norm: NormKind::None,
            input_noise: 0.0,
            objective_noise: 0.0,
            gradient_noise: 0.0,
            gradient_noise_decay: DEFAULT_GRADIENT_NOISE_DECAY,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f32| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("regularizer.{name}: must be a finite value >= 0, got {v}")))
            }
        };
        nonneg("weight_decay", self.weight_decay)?;
        nonneg("input_noise", self.input_noise)?;
        nonneg("objective_noise", self.objective_noise)?;
        nonneg("gradient_noise", self.gradient_noise)?;
        nonneg("gradient_noise_decay", self.gradient_noise_decay)?;
        if !(0.0..=1.0).contains(&self.weight_decay_alpha) {
            return Err(Error::Config(format!(
                "regularizer.weight_decay_alpha: must lie in [0, 1], got {}",
                self.weight_decay_alpha
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "regularizer.dropout: must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn weight_decay_mode(&self) -> Option<WeightDecayMode> {
        match self.weight_decay_alpha {
            a if a == 0.0 => Some(WeightDecayMode::L2),
            a if a == 0.5 => Some(WeightDecayMode::ElasticNet),
            a if a == 1.0 => Some(WeightDecayMode::L1),
            _ => None,
        }
    }

    pub fn is_inactive(&self) -> bool {
        self.weight_decay == 0.0
            && self.dropout == 0.0
            && self.norm == NormKind::None
            && self.input_noise == 0.0
            && self.objective_noise == 0.0
            && self.gradient_noise == 0.0
    }

    /// Sum of the continuous regularization strengths; used to order
    /// otherwise tied sweep points.
    pub fn magnitude(&self) -> f64 {
        let norm = if self.norm == NormKind::None { 0.0 } else { 1.0 };
        (self.weight_decay + self.dropout + self.input_noise + self.objective_noise + self.gradient_noise) as f64
            + norm
    }
}

/// ω(α‖θ‖₁ + (1−α)‖θ‖₂²) over the given weight matrices, recorded on the tape.
pub fn elastic_net_penalty(g: &mut Graph, weights: &[Var], omega: f32, alpha: f32) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &w in weights {
        let mut term: Option<Var> = None;
        if alpha > 0.0 {
            let a = g.abs(w)?;
            let s = g.sum(a)?;
            term = Some(g.scale(s, alpha)?);
        }
        if alpha < 1.0 {
            let sq = g.square(w)?;
            let s = g.sum(sq)?;
            let l2 = g.scale(s, 1.0 - alpha)?;
            term = Some(match term {
                Some(t) => g.add(t, l2)?,
                None => l2,
            });
        }
        let term = term.expect("alpha in [0, 1] yields a term");
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    match total {
        Some(t) => Ok(g.scale(t, omega)?),
        None => Ok(g.constant(Tensor::scalar(0.0))),
    }
}

/// Plain-value version of [`elastic_net_penalty`].
pub fn elastic_net_value(weights: &[&Tensor], omega: f32, alpha: f32) -> f32 {
    let (mut l1, mut l2) = (0.0f64, 0.0f64);
    for w in weights {
        for &x in w.data() {
            l1 += (x as f64).abs();
            l2 += (x as f64) * (x as f64);
        }
    }
    (omega as f64 * (alpha as f64 * l1 + (1.0 - alpha as f64) * l2)) as f32
}

/// Inverted-dropout mask: zeros with probability `rate`, survivors `1/(1−rate)`.
pub fn dropout_mask(shape: &[usize], rate: f32, rng: &mut Rng) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.bernoulli(rate as f64) { 0.0 } else { keep })
        .collect();
    Tensor::new(shape, data).expect("mask shape")
}

/// Applies inverted dropout in training; identity otherwise or at rate 0.
pub fn dropout_forward(g: &mut Graph, x: Var, rate: f32, rng: Option<&mut Rng>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let mask = dropout_mask(g.value(x).shape(), rate, rng);
            let m = g.constant(mask);
            Ok(g.mul(x, m)?)
        }
        _ => Ok(x),
    }
}

/// Multiplies `x` by a caller-supplied keep mask (1 = keep), scaling survivors.
pub fn dropout_with_mask(g: &mut Graph, x: Var, keep: &Tensor, rate: f32) -> Result<Var> {
    let scaled = keep.map(|k| k / (1.0 - rate));
    let m = g.constant(scaled);
    Ok(g.mul(x, m)?)
}

/// Running per-feature statistics for feature normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl FeatureStats {
    pub fn new(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            var: vec![1.0; width],
        }
    }

    /// Blends the batch's column moments into the running statistics.
    pub fn updated(&self, batch: &Tensor) -> Self {
        let (r, c) = (batch.rows(), batch.cols());
        let mut mean = vec![0.0f64; c];
        for i in 0..r {
            for (m, &x) in mean.iter_mut().zip(batch.row(i)) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= r as f64);
        let mut var = vec![0.0f64; c];
        for i in 0..r {
            for ((v, &x), m) in var.iter_mut().zip(batch.row(i)).zip(&mean) {
                *v += (x as f64 - m).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= r as f64);
        let k = FEATURE_NORM_MOMENTUM;
        Self {
            mean: self.mean.iter().zip(&mean).map(|(a, &b)| k * a + (1.0 - k) * b as f32).collect(),
            var: self.var.iter().zip(&var).map(|(a, &b)| k * a + (1.0 - k) * b as f32).collect(),
        }
    }
}

/// Parameters of an activation-normalization layer.
pub enum NormParams<'a> {
    Layer,
    Group(usize),
    Feature(&'a FeatureStats),
}

/// Normalizes `x` (no affine). Layer and group kinds standardize within each
/// sample; the feature kind standardizes each column with `stats`.
pub fn norm_forward(g: &mut Graph, x: Var, params: NormParams<'_>) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let (rows, cols) = (g.value(x).rows(), g.value(x).cols());
    match params {
        NormParams::Layer => Ok(g.layer_norm_rows(x, NORM_EPS)?),
        NormParams::Group(groups) => {
            if groups == 0 || cols % groups != 0 {
                return Err(Error::Config(format!(
                    "group norm: width {cols} is not divisible by group count {groups}"
                )));
            }
            let grouped = g.reshape(x, &[rows * groups, cols / groups])?;
            let normed = g.layer_norm_rows(grouped, NORM_EPS)?;
            Ok(g.reshape(normed, &shape)?)
        }
        NormParams::Feature(stats) => {
            if stats.mean.len() != cols {
                return Err(Error::Config(format!(
                    "feature norm: statistics width {} does not match input width {cols}",
                    stats.mean.len()
                )));
            }
            let mean = g.constant(Tensor::new(&[1, cols], stats.mean.clone())?);
            let inv: Vec<f32> = stats.var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
            let inv = g.constant(Tensor::new(&[1, cols], inv)?);
            let centered = g.sub(x, mean)?;
            Ok(g.mul(centered, inv)?)
        }
    }
}

/// Power-iteration vectors for one `[rows, cols]` weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

fn normalized(x: Vec<f64>, fallback: &[f32]) -> Vec<f32> {
    let n = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n < 1e-30 {
        return fallback.to_vec();
    }
    x.iter().map(|a| (a / n) as f32).collect()
}

impl SpectralState {
    pub fn new(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let u = normalized((0..rows).map(|_| rng.normal() as f64).collect(), &vec![1.0; rows]);
        let v = normalized((0..cols).map(|_| rng.normal() as f64).collect(), &vec![1.0; cols]);
        Self { u, v }
    }

    /// One round `v ← Wᵀu/‖Wᵀu‖`, `u ← Wv/‖Wv‖`. A zero matrix leaves the
    /// vectors unchanged.
    pub fn iterate(&self, w: &Tensor) -> Self {
        let (r, c) = (w.rows(), w.cols());
        let mut wt_u = vec![0.0f64; c];
        for i in 0..r {
            let ui = self.u[i] as f64;
            for (acc, &x) in wt_u.iter_mut().zip(w.row(i)) {
                *acc += ui * x as f64;
            }
        }
        let v = normalized(wt_u, &self.v);
        let w_v: Vec<f64> = (0..r)
            .map(|i| w.row(i).iter().zip(&v).map(|(&a, &b)| a as f64 * b as f64).sum())
            .collect();
        let u = normalized(w_v, &self.u);
        Self { u, v }
    }

    /// σ̂ = uᵀWv.
    pub fn sigma(&self, w: &Tensor) -> f32 {
        let mut s = 0.0f64;
        for i in 0..w.rows() {
            let wv: f64 = w.row(i).iter().zip(&self.v).map(|(&a, &b)| a as f64 * b as f64).sum();
            s += self.u[i] as f64 * wv;
        }
        s as f32
    }
}

/// `W / σ̂(W)` on the tape, with σ̂ = uᵀWv differentiable in `W` and the
/// power-iteration vectors held constant.
pub fn spectral_normalize(g: &mut Graph, w: Var, state: &SpectralState) -> Result<Var> {
    let (r, c) = (g.value(w).rows(), g.value(w).cols());
    if state.sigma(g.value(w)).abs() < SPECTRAL_SIGMA_FLOOR {
        let floor = g.constant(Tensor::scalar(SPECTRAL_SIGMA_FLOOR));
        return Ok(g.div(w, floor)?);
    }
    let u = g.constant(Tensor::new(&[1, r], state.u.clone())?);
    let v = g.constant(Tensor::new(&[c, 1], state.v.clone())?);
    let uw = g.matmul(u, w)?;
    let sigma = g.matmul(uw, v)?;
    let sigma = g.abs(sigma)?;
    Ok(g.div(w, sigma)?)
}

/// Plain-value spectral normalization after `iters` power iterations.
pub fn spectral_normalize_value(w: &Tensor, state: &mut SpectralState, iters: usize) -> Tensor {
    for _ in 0..iters {
        *state = state.iterate(w);
    }
    let s = state.sigma(w).abs().max(SPECTRAL_SIGMA_FLOOR);
    w.map(|x| x / s)
}

/// ỹ = y + ν·ε with ε ~ N(0, 1); exact identity (and no draws) at ν = 0.
pub fn inject_noise(y: &Tensor, nu: f32, rng: &mut Rng) -> Tensor {
    if nu == 0.0 {
        return y.clone();
    }
    let mut out = y.clone();
    for x in out.data_mut() {
        *x += nu * rng.normal();
    }
    out
}

/// ν_gr / (1 + t)^γ.
pub fn gradient_noise_scale(nu: f32, t: u64, gamma: f32) -> f32 {
    (nu as f64 / (1.0 + t as f64).powf(gamma as f64)) as f32
}

/// Adds N(0, scale²) noise to every gradient tensor.
pub fn add_gradient_noise(grads: &mut [Tensor], scale: f32, rng: &mut Rng) {
    if scale == 0.0 {
        return;
    }
    for g in grads {
        for x in g.data_mut() {
            *x += scale * rng.normal();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], d: &[f32]) -> Tensor {
        Tensor::new(shape, d.to_vec()).unwrap()
    }

    fn penalty(theta: &[f32], omega: f32, alpha: f32) -> f32 {
        let mut g = Graph::new();
        let w = g.param(t(&[theta.len()], theta));
        let p = elastic_net_penalty(&mut g, &[w], omega, alpha).unwrap();
        g.value(p).item()
    }

    #[test]
    fn elastic_net_hand_values() {
        assert!((penalty(&[1.0, -2.0], 0.1, 0.5) - 0.4).abs() < 1e-6);
        assert_eq!(penalty(&[1.0, -2.0], 0.0, 0.5), 0.0);
        assert!((penalty(&[3.0, -4.0], 1.0, 1.0) - 7.0).abs() < 1e-6);
        assert!((penalty(&[3.0, -4.0], 1.0, 0.0) - 25.0).abs() < 1e-6);
        assert!((elastic_net_value(&[&t(&[2], &[1.0, -2.0])], 0.1, 0.5) - 0.4).abs() < 1e-6);
    }

    #[test]
    fn elastic_net_gradient_matches_closed_form() {
        let theta = [0.3f32, -1.2, 2.5, -0.01];
        let (omega, alpha) = (0.2f32, 0.5f32);
        let mut g = Graph::new();
        let w = g.param(t(&[4], &theta));
        let p = elastic_net_penalty(&mut g, &[w], omega, alpha).unwrap();
        let grad = g.backward(p).unwrap().get(w);
        for (gv, &th) in grad.data().iter().zip(&theta) {
            let want = omega * (alpha * th.signum() + 2.0 * (1.0 - alpha) * th);
            assert!(((gv - want) / want).abs() < 1e-5, "{gv} vs {want}");
        }
    }

    #[test]
    fn l1_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let w = g.param(t(&[2], &[0.0, 1.0]));
        let p = elastic_net_penalty(&mut g, &[w], 1.0, 1.0).unwrap();
        assert_eq!(g.backward(p).unwrap().get(w).data(), &[0.0, 1.0]);
    }

    #[test]
    fn weight_decay_modes() {
        let mut c = RegularizerConfig::default();
        assert_eq!(c.weight_decay_mode(), Some(WeightDecayMode::L2));
        c.weight_decay_alpha = 0.5;
        assert_eq!(c.weight_decay_mode(), Some(WeightDecayMode::ElasticNet));
        c.weight_decay_alpha = 1.0;
        assert_eq!(c.weight_decay_mode(), Some(WeightDecayMode::L1));
        c.weight_decay_alpha = 0.3;
        assert_eq!(c.weight_decay_mode(), None);
    }

    #[test]
    fn config_validation() {
        assert!(RegularizerConfig::default().validate().is_ok());
        let bad = [
            RegularizerConfig { weight_decay: -0.1, ..Default::default() },
            RegularizerConfig { dropout: 1.0, ..Default::default() },
            RegularizerConfig { weight_decay_alpha: 1.5, ..Default::default() },
            RegularizerConfig { input_noise: f32::NAN, ..Default::default() },
            RegularizerConfig { gradient_noise: -1.0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn dropout_identities() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[2.0, 4.0]));
        let mut rng = Rng::new(1, 0);
        assert_eq!(dropout_forward(&mut g, x, 0.0, Some(&mut rng)).unwrap(), x);
        assert_eq!(dropout_forward(&mut g, x, 0.7, None).unwrap(), x);
    }

    #[test]
    fn dropout_fixed_mask() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[2.0, 4.0]));
        let y = dropout_with_mask(&mut g, x, &t(&[2], &[1.0, 0.0]), 0.5).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, 0.0]);
    }

    #[test]
    fn layer_norm_of_one_two_three() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let y = norm_forward(&mut g, x, NormParams::Layer).unwrap();
        let want = [-1.2247, 0.0, 1.2247];
        for (a, b) in g.value(y).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 4], &[3.0; 4]));
        let y = norm_forward(&mut g, x, NormParams::Layer).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_group_equals_layer_norm() {
        let mut rng = Rng::new(3, 0);
        let mut g = Graph::new();
        let x = g.constant(rng.normal_tensor(&[5, 8]));
        let a = norm_forward(&mut g, x, NormParams::Layer).unwrap();
        let b = norm_forward(&mut g, x, NormParams::Group(1)).unwrap();
        assert_eq!(g.value(a), g.value(b));
    }

    #[test]
    fn group_count_must_divide_width() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 6]));
        assert!(matches!(norm_forward(&mut g, x, NormParams::Group(4)), Err(Error::Config(_))));
    }

    #[test]
    fn feature_norm_uses_running_statistics() {
        let stats = FeatureStats {
            mean: vec![1.0, -1.0],
            var: vec![4.0, 1.0],
        };
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[3.0, -1.0]));
        let y = norm_forward(&mut g, x, NormParams::Feature(&stats)).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 2.0 / (4.0f32 + NORM_EPS).sqrt()).abs() < 1e-6);
        assert_eq!(v[1], 0.0);
        let upd = FeatureStats::new(2).updated(&t(&[2, 2], &[1.0, 2.0, 3.0, 2.0]));
        assert!((upd.mean[0] - 0.02).abs() < 1e-6);
        assert!((upd.var[1] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn spectral_diag_two_one() {
        let w = t(&[2, 2], &[2.0, 0.0, 0.0, 1.0]);
        let mut st = SpectralState::new(2, 2, &mut Rng::new(5, 0));
        let n = spectral_normalize_value(&w, &mut st, 50);
        let want = [1.0, 0.0, 0.0, 0.5];
        for (a, b) in n.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        let un = st.u.iter().map(|x| x * x).sum::<f32>();
        assert!((un - 1.0).abs() < 1e-5);
    }

    #[test]
    fn spectral_zero_matrix_stays_zero() {
        let w = Tensor::zeros(&[3, 2]);
        let mut st = SpectralState::new(3, 2, &mut Rng::new(5, 0));
        let n = spectral_normalize_value(&w, &mut st, 3);
        assert!(n.data().iter().all(|&x| x == 0.0));
        let mut g = Graph::new();
        let wv = g.param(w);
        let y = spectral_normalize(&mut g, wv, &st).unwrap();
        assert!(g.value(y).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn noise_identity_at_zero_and_replayable() {
        let y = t(&[3], &[1.0, 2.0, 3.0]);
        let mut rng = Rng::new(9, 0);
        assert_eq!(inject_noise(&y, 0.0, &mut rng), y);
        let a = inject_noise(&y, 0.1, &mut Rng::new(9, 1));
        let b = inject_noise(&y, 0.1, &mut Rng::new(9, 1));
        assert_eq!(a, b);
        assert_ne!(a, y);
    }

    #[test]
    fn noise_standard_deviation() {
        let mut rng = Rng::new(11, 0);
        let zero = Tensor::scalar(0.0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| inject_noise(&zero, 0.1, &mut rng).item() as f64).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((0.098..=0.102).contains(&sd), "{sd}");
    }

    #[test]
    fn gradient_noise_schedule() {
        assert_eq!(gradient_noise_scale(0.3, 0, 0.55), 0.3);
        let s = gradient_noise_scale(0.1, 99, 0.55);
        assert!((s - 0.007943).abs() < 1e-6, "{s}");
        for t in [0, 5, 1000] {
            assert_eq!(gradient_noise_scale(0.1, t, 0.0), 0.1);
        }
    }
}
