//! MLP builders for actors, critics and value functions.
//!
//! Every hidden block is `linear → ReLU → norm (optional) → dropout (optional)`.
//! Spectral normalization is a weight reparameterization of the hidden linear
//! layers and adds no layer of its own.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::binio::ByteCursor;
use crate::error::{Error, FormatError, Result};
use crate::graph::{Graph, Var};
use crate::regularizers::{
    dropout_forward, norm_forward, spectral_normalize, FeatureStats, NormKind, NormParams, SpectralState,
    DEFAULT_GROUP_COUNT,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LOG_STD_MIN: f32 = -5.0;
pub const LOG_STD_MAX: f32 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Linear,
    Tanh,
    Gaussian,
}

impl Head {
    fn code(self) -> u8 {
        match self {
            Head::Linear => 0,
            Head::Tanh => 1,
            Head::Gaussian => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        [Head::Linear, Head::Tanh, Head::Gaussian].get(c as usize).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Orthogonal,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_dim: usize,
    pub num_hidden_layers: usize,
    pub norm: NormKind,
    pub dropout: f32,
    pub head: Head,
    pub log_std_min: f32,
    pub log_std_max: f32,
    pub group_count: usize,
    pub init: Init,
    /// Gain of the orthogonal init of the output layer; hidden layers use √2.
    pub output_gain: f32,
}

impl MlpSpec {
    pub fn new(input_dim: usize, output_dim: usize, hidden_dim: usize, num_hidden_layers: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden_dim,
            num_hidden_layers,
            norm: NormKind::None,
            dropout: 0.0,
            head: Head::Linear,
            log_std_min: LOG_STD_MIN,
            log_std_max: LOG_STD_MAX,
            group_count: DEFAULT_GROUP_COUNT,
            init: Init::Orthogonal,
            output_gain: 1.0,
        }
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn with_norm(mut self, norm: NormKind) -> Self {
        self.norm = norm;
        self
    }

    pub fn with_dropout(mut self, rate: f32) -> Self {
        self.dropout = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("network: input and output dims must be >= 1".into()));
        }
        if self.hidden_dim == 0 || self.num_hidden_layers == 0 {
            return Err(Error::Config("network: hidden_dim and num_hidden_layers must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("network: dropout {} outside [0, 1)", self.dropout)));
        }
        if self.norm == NormKind::Group && (self.group_count == 0 || self.hidden_dim % self.group_count != 0) {
            return Err(Error::Config(format!(
                "network: hidden_dim {} is not divisible by group count {}",
                self.hidden_dim, self.group_count
            )));
        }
        if self.log_std_min >= self.log_std_max {
            return Err(Error::Config("network: log_std_min must be below log_std_max".into()));
        }
        Ok(())
    }

    fn raw_output_dim(&self) -> usize {
        match self.head {
            Head::Gaussian => 2 * self.output_dim,
            _ => self.output_dim,
        }
    }
}

/// One entry of the serialized layer order.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Linear { inputs: usize, outputs: usize, spectral: bool },
    Relu,
    Norm(NormKind),
    Dropout(f32),
    Tanh,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `[inputs, outputs]`, applied as `x · W`.
    pub weight: Tensor,
    /// `[1, outputs]`
    pub bias: Tensor,
    pub spectral: Option<SpectralState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hidden {
    pub linear: Linear,
    /// Learned scale and shift of an activation norm.
    pub norm_affine: Option<(Tensor, Tensor)>,
    pub feature_stats: Option<FeatureStats>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bind {
    /// Parameters are tracked leaves; their gradients are returned.
    Params,
    /// Parameters are constants; gradients still flow to the input.
    Constants,
}

/// Buffer changes produced by a training-mode forward pass.
#[derive(Clone, Debug)]
pub enum BufferUpdate {
    Spectral { layer: usize, state: SpectralState },
    FeatureStats { layer: usize, stats: FeatureStats },
}

/// Training-mode context: dropout masks come from `rng`, buffer updates
/// are collected for [`Mlp::apply_updates`].
pub struct TrainCtx<'a> {
    pub rng: &'a mut Rng,
    pub updates: Vec<BufferUpdate>,
}

impl<'a> TrainCtx<'a> {
    pub fn new(rng: &'a mut Rng) -> Self {
        Self {
            rng,
            updates: Vec::new(),
        }
    }
}

pub struct MlpOut {
    /// Linear output, tanh-bounded action, or gaussian mean.
    pub output: Var,
    pub log_std: Option<Var>,
    /// Post-ReLU output of the last hidden layer.
    pub penultimate: Var,
    /// Bound parameters in [`Mlp::params`] order.
    pub params: Vec<Var>,
}

/// Orthogonal matrix of shape `[rows, cols]` scaled by `gain`.
pub fn orthogonal(rows: usize, cols: usize, gain: f32, rng: &mut Rng) -> Tensor {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    // columns of a tall × short gaussian matrix, orthonormalized
    let mut q: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..tall).map(|_| rng.normal() as f64).collect())
        .collect();
    for j in 0..short {
        for _ in 0..2 {
            for k in 0..j {
                let d: f64 = q[j].iter().zip(&q[k]).map(|(a, b)| a * b).sum();
                let qk = q[k].clone();
                for (a, b) in q[j].iter_mut().zip(&qk) {
                    *a -= d * b;
                }
            }
        }
        let n = q[j].iter().map(|a| a * a).sum::<f64>().sqrt();
        q[j].iter_mut().for_each(|a| *a /= n);
    }
    let mut data = vec![0.0f32; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let v = if rows >= cols { q[j][i] } else { q[i][j] };
            data[i * cols + j] = gain * v as f32;
        }
    }
    Tensor::new(&[rows, cols], data).expect("orthogonal shape")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub hidden: Vec<Hidden>,
    pub output: Linear,
}

impl Mlp {
    pub fn build(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let make = |inputs: usize, outputs: usize, gain: f32, rng: &mut Rng| match spec.init {
            Init::Orthogonal => orthogonal(inputs, outputs, gain, rng),
            Init::Zeros => Tensor::zeros(&[inputs, outputs]),
        };
        let mut hidden = Vec::with_capacity(spec.num_hidden_layers);
        for i in 0..spec.num_hidden_layers {
            let inputs = if i == 0 { spec.input_dim } else { spec.hidden_dim };
            let weight = make(inputs, spec.hidden_dim, std::f32::consts::SQRT_2, rng);
            let spectral =
                (spec.norm == NormKind::Spectral).then(|| SpectralState::new(inputs, spec.hidden_dim, rng));
            let norm_affine = spec.norm.is_activation_norm().then(|| {
                (
                    Tensor::full(&[1, spec.hidden_dim], 1.0),
                    Tensor::zeros(&[1, spec.hidden_dim]),
                )
            });
            let feature_stats = (spec.norm == NormKind::Feature).then(|| FeatureStats::new(spec.hidden_dim));
            hidden.push(Hidden {
                linear: Linear {
                    weight,
                    bias: Tensor::zeros(&[1, spec.hidden_dim]),
                    spectral,
                },
                norm_affine,
                feature_stats,
            });
        }
        let out_dim = spec.raw_output_dim();
        let output = Linear {
            weight: make(spec.hidden_dim, out_dim, spec.output_gain, rng),
            bias: Tensor::zeros(&[1, out_dim]),
            spectral: None,
        };
        Ok(Self { spec, hidden, output })
    }

    /// Serialized layer order.
    pub fn layers(&self) -> Vec<LayerKind> {
        let s = &self.spec;
        let mut out = Vec::new();
        for (i, h) in self.hidden.iter().enumerate() {
            out.push(LayerKind::Linear {
                inputs: if i == 0 { s.input_dim } else { s.hidden_dim },
                outputs: s.hidden_dim,
                spectral: h.linear.spectral.is_some(),
            });
            out.push(LayerKind::Relu);
            if s.norm.is_activation_norm() {
                out.push(LayerKind::Norm(s.norm));
            }
            if s.dropout > 0.0 {
                out.push(LayerKind::Dropout(s.dropout));
            }
        }
        out.push(LayerKind::Linear {
            inputs: s.hidden_dim,
            outputs: s.raw_output_dim(),
            spectral: false,
        });
        match s.head {
            Head::Linear => {}
            Head::Tanh => out.push(LayerKind::Tanh),
            Head::Gaussian => out.push(LayerKind::Gaussian),
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for h in &self.hidden {
            out.push(&h.linear.weight);
            out.push(&h.linear.bias);
            if let Some((scale, shift)) = &h.norm_affine {
                out.push(scale);
                out.push(shift);
            }
        }
        out.push(&self.output.weight);
        out.push(&self.output.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for h in &mut self.hidden {
            out.push(&mut h.linear.weight);
            out.push(&mut h.linear.bias);
            if let Some((scale, shift)) = &mut h.norm_affine {
                out.push(scale);
                out.push(shift);
            }
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, h) in self.hidden.iter().enumerate() {
            out.push(format!("hidden.{i}.weight"));
            out.push(format!("hidden.{i}.bias"));
            if h.norm_affine.is_some() {
                out.push(format!("hidden.{i}.norm.scale"));
                out.push(format!("hidden.{i}.norm.shift"));
            }
        }
        out.push("output.weight".into());
        out.push("output.bias".into());
        out
    }

    /// Positions in [`Mlp::params`] of the weight matrices (penalized by
    /// weight decay; biases and norm affines are not).
    pub fn weight_indices(&self) -> Vec<usize> {
        self.param_names()
            .iter()
            .enumerate()
            .filter(|(_, n)| n.ends_with(".weight"))
            .map(|(i, _)| i)
            .collect()
    }

    fn buffers(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, h) in self.hidden.iter().enumerate() {
            if let Some(st) = &h.linear.spectral {
                out.push((format!("hidden.{i}.spectral.u"), vec_tensor(&st.u)));
                out.push((format!("hidden.{i}.spectral.v"), vec_tensor(&st.v)));
            }
            if let Some(fs) = &h.feature_stats {
                out.push((format!("hidden.{i}.feature.mean"), vec_tensor(&fs.mean)));
                out.push((format!("hidden.{i}.feature.var"), vec_tensor(&fs.var)));
            }
        }
        out
    }

    pub fn forward(&self, g: &mut Graph, x: Var, bind: Bind, mut train: Option<&mut TrainCtx<'_>>) -> Result<MlpOut> {
        let in_cols = g.value(x).cols();
        if in_cols != self.spec.input_dim || g.value(x).shape().len() != 2 {
            return Err(crate::error::ComputeError::Shape {
                op: "mlp input",
                lhs: g.value(x).shape().to_vec(),
                rhs: vec![self.spec.input_dim],
            }
            .into());
        }
        let params: Vec<Var> = self
            .params()
            .into_iter()
            .map(|p| match bind {
                Bind::Params => g.param(p.clone()),
                Bind::Constants => g.constant(p.clone()),
            })
            .collect();
        let mut cursor = 0;
        let mut h = x;
        let mut penultimate = x;
        for (i, block) in self.hidden.iter().enumerate() {
            let (w, b) = (params[cursor], params[cursor + 1]);
            cursor += 2;
            let w_eff = match &block.linear.spectral {
                Some(state) => match train.as_deref_mut() {
                    Some(ctx) => {
                        let next = state.iterate(&block.linear.weight);
                        let out = spectral_normalize(g, w, &next)?;
                        ctx.updates.push(BufferUpdate::Spectral { layer: i, state: next });
                        out
                    }
                    None => spectral_normalize(g, w, state)?,
                },
                None => w,
            };
            let z = g.matmul(h, w_eff)?;
            let z = g.add(z, b)?;
            let a = g.relu(z)?;
            penultimate = a;
            h = a;
            if self.spec.norm.is_activation_norm() {
                let normed = match self.spec.norm {
                    NormKind::Layer => norm_forward(g, h, NormParams::Layer)?,
                    NormKind::Group => norm_forward(g, h, NormParams::Group(self.spec.group_count))?,
                    NormKind::Feature => {
                        let stats = block.feature_stats.as_ref().expect("feature stats");
                        match train.as_deref_mut() {
                            Some(ctx) => {
                                let next = stats.updated(g.value(h));
                                let out = norm_forward(g, h, NormParams::Feature(&next))?;
                                ctx.updates.push(BufferUpdate::FeatureStats { layer: i, stats: next });
                                out
                            }
                            None => norm_forward(g, h, NormParams::Feature(stats))?,
                        }
                    }
                    _ => unreachable!(),
                };
                let (scale, shift) = (params[cursor], params[cursor + 1]);
                cursor += 2;
                let scaled = g.mul(normed, scale)?;
                h = g.add(scaled, shift)?;
            }
            if self.spec.dropout > 0.0 {
                h = dropout_forward(g, h, self.spec.dropout, train.as_deref_mut().map(|c| &mut *c.rng))?;
            }
        }
        let (w, b) = (params[cursor], params[cursor + 1]);
        let z = g.matmul(h, w)?;
        let raw = g.add(z, b)?;
        let (output, log_std) = match self.spec.head {
            Head::Linear => (raw, None),
            Head::Tanh => (g.tanh(raw)?, None),
            Head::Gaussian => {
                let m = self.spec.output_dim;
                let mean = g.slice_cols(raw, 0, m)?;
                let mean = g.tanh(mean)?;
                let ls = g.slice_cols(raw, m, 2 * m)?;
                let ls = g.clamp(ls, self.spec.log_std_min, self.spec.log_std_max)?;
                (mean, Some(ls))
            }
        };
        Ok(MlpOut {
            output,
            log_std,
            penultimate,
            params,
        })
    }

    pub fn apply_updates(&mut self, updates: Vec<BufferUpdate>) {
        for u in updates {
            match u {
                BufferUpdate::Spectral { layer, state } => self.hidden[layer].linear.spectral = Some(state),
                BufferUpdate::FeatureStats { layer, stats } => self.hidden[layer].feature_stats = Some(stats),
            }
        }
    }

    /// Eval-mode output for a `[batch, input_dim]` matrix.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, xv, Bind::Constants, None)?;
        Ok(g.value(out.output).clone())
    }

    /// Post-ReLU, pre-norm, pre-dropout output of the last hidden layer (eval mode).
    pub fn penultimate_features(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, xv, Bind::Constants, None)?;
        Ok(g.value(out.penultimate).clone())
    }

    /// `self ← τ·online + (1−τ)·self` on parameters; buffers are copied.
    pub fn polyak_from(&mut self, online: &Mlp, tau: f32) {
        for (t, o) in self.params_mut().into_iter().zip(online.params()) {
            for (a, &b) in t.data_mut().iter_mut().zip(o.data()) {
                *a = tau * b + (1.0 - tau) * *a;
            }
        }
        for (t, o) in self.hidden.iter_mut().zip(&online.hidden) {
            t.linear.spectral.clone_from(&o.linear.spectral);
            t.feature_stats.clone_from(&o.feature_stats);
        }
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let s = &self.spec;
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [s.input_dim, s.output_dim, s.hidden_dim, s.num_hidden_layers, s.group_count] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.push(0); // activation: ReLU
        buf.push(s.norm.code());
        buf.push(s.head.code());
        for v in [s.dropout, s.log_std_min, s.log_std_max] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut tensors: Vec<(String, Tensor)> = self
            .param_names()
            .into_iter()
            .zip(self.params().into_iter().cloned())
            .collect();
        tensors.extend(self.buffers());
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in t.data() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = ByteCursor::new(&bytes);
        let magic = cur.take(8, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic {
                expected: CHECKPOINT_MAGIC.to_vec(),
                found: magic.to_vec(),
            }
            .into());
        }
        let version = cur.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::Version(version).into());
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = cur.u32("header")? as usize;
        }
        let codes = cur.take(3, "header")?;
        let norm = NormKind::from_code(codes[1]).ok_or_else(|| FormatError::Invalid("norm code".into()))?;
        let head = Head::from_code(codes[2]).ok_or_else(|| FormatError::Invalid("head code".into()))?;
        if codes[0] != 0 {
            return Err(FormatError::Invalid("unknown activation code".into()).into());
        }
        let dropout = cur.f32("header")?;
        let log_std_min = cur.f32("header")?;
        let log_std_max = cur.f32("header")?;
        let spec = MlpSpec {
            input_dim: dims[0],
            output_dim: dims[1],
            hidden_dim: dims[2],
            num_hidden_layers: dims[3],
            group_count: dims[4],
            norm,
            head,
            dropout,
            log_std_min,
            log_std_max,
            init: Init::Zeros,
            output_gain: 1.0,
        };
        let mut net = Mlp::build(spec, &mut Rng::new(0, 0))?;
        let count = cur.u32("tensor count")? as usize;
        let mut tensors = std::collections::HashMap::new();
        for i in 0..count {
            let section = format!("tensor {i}");
            let len = cur.u32(&section)? as usize;
            let name = String::from_utf8(cur.take(len, &section)?.to_vec())
                .map_err(|_| FormatError::Invalid("tensor name is not utf-8".into()))?;
            let rank = cur.u32(&name)? as usize;
            if rank > 2 {
                return Err(FormatError::Invalid(format!("{name}: rank {rank}")).into());
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u32(&name)? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = cur.take(4 * n, &name)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(name, Tensor::new(&shape, data)?);
        }
        let mut fetch = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = tensors
                .remove(name)
                .ok_or_else(|| FormatError::Invalid(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(FormatError::Invalid(format!("{name}: shape {:?}, expected {shape:?}", t.shape())).into());
            }
            Ok(t)
        };
        let names = net.param_names();
        for (name, p) in names.iter().zip(net.params_mut()) {
            *p = fetch(name, &p.shape().to_vec())?;
        }
        for (i, h) in net.hidden.iter_mut().enumerate() {
            if let Some(st) = &mut h.linear.spectral {
                st.u = fetch(&format!("hidden.{i}.spectral.u"), &[st.u.len()])?.into_data();
                st.v = fetch(&format!("hidden.{i}.spectral.v"), &[st.v.len()])?.into_data();
            }
            if let Some(fs) = &mut h.feature_stats {
                fs.mean = fetch(&format!("hidden.{i}.feature.mean"), &[fs.mean.len()])?.into_data();
                fs.var = fetch(&format!("hidden.{i}.feature.var"), &[fs.var.len()])?.into_data();
            }
        }
        if !cur.is_done() {
            return Err(FormatError::Invalid("trailing bytes after tensors".into()).into());
        }
        Ok(net)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ACTREGNN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn vec_tensor(v: &[f32]) -> Tensor {
    Tensor::new(&[v.len()], v.to_vec()).expect("vector")
}

/// Policy network: tanh-bounded deterministic head or gaussian head.
#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    pub net: Mlp,
}

impl Actor {
    pub fn new(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        if spec.head == Head::Linear {
            return Err(Error::Config("actor: head must be tanh or gaussian".into()));
        }
        Ok(Self {
            net: Mlp::build(spec, rng)?,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.net.spec.output_dim
    }

    pub fn state_dim(&self) -> usize {
        self.net.spec.input_dim
    }

    pub fn forward(&self, g: &mut Graph, states: Var, bind: Bind, train: Option<&mut TrainCtx<'_>>) -> Result<MlpOut> {
        self.net.forward(g, states, bind, train)
    }

    /// Deterministic eval-mode actions (the mean for a gaussian head),
    /// every coordinate in `[−1, 1]`.
    pub fn act(&self, states: &Tensor) -> Result<Tensor> {
        self.net.predict(states)
    }

    /// Samples actions from the gaussian head (clipped to `[−1, 1]`);
    /// deterministic heads return their action.
    pub fn sample(&self, states: &Tensor, rng: &mut Rng) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(states.clone());
        let out = self.net.forward(&mut g, x, Bind::Constants, None)?;
        let mut mean = g.value(out.output).clone();
        if let Some(ls) = out.log_std {
            let ls = g.value(ls).clone();
            for (m, l) in mean.data_mut().iter_mut().zip(ls.data()) {
                *m = (*m + l.exp() * rng.normal()).clamp(-1.0, 1.0);
            }
        }
        Ok(mean)
    }
}

/// Categorical value support: `bins` evenly spaced centers over `[v_min, v_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSupport {
    pub bins: usize,
    pub v_min: f32,
    pub v_max: f32,
}

impl CategoricalSupport {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 || !(self.v_min < self.v_max) {
            return Err(Error::Config(format!(
                "categorical critic: need bins >= 2 and v_min < v_max, got {} bins over [{}, {}]",
                self.bins, self.v_min, self.v_max
            )));
        }
        Ok(())
    }

    pub fn centers(&self) -> Vec<f32> {
        let step = (self.v_max - self.v_min) / (self.bins - 1) as f32;
        (0..self.bins).map(|i| self.v_min + step * i as f32).collect()
    }
}

/// Twin Q heads over `concat(state, action)`; the heads share no parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub heads: [Mlp; 2],
    pub categorical: Option<CategoricalSupport>,
}

impl Critic {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden_dim: usize,
        layers: usize,
        norm: NormKind,
        categorical: Option<CategoricalSupport>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if let Some(c) = &categorical {
            c.validate()?;
        }
        let out = categorical.map_or(1, |c| c.bins);
        let spec = MlpSpec::new(state_dim + action_dim, out, hidden_dim, layers).with_norm(norm);
        let q1 = Mlp::build(spec.clone(), rng)?;
        let q2 = Mlp::build(spec, rng)?;
        Ok(Self {
            heads: [q1, q2],
            categorical,
        })
    }

    /// Raw head output: Q values `[b, 1]` or logits `[b, bins]`.
    pub fn head_forward(&self, head: usize, g: &mut Graph, states: Var, actions: Var, bind: Bind) -> Result<MlpOut> {
        let x = g.concat_cols(states, actions)?;
        self.heads[head].forward(g, x, bind, None)
    }

    /// Q readout `[b, 1]`; for categorical heads the expectation over bin centers.
    pub fn q_from_output(&self, g: &mut Graph, raw: Var) -> Result<Var> {
        match &self.categorical {
            None => Ok(raw),
            Some(c) => {
                let logp = g.log_softmax_rows(raw)?;
                let p = g.exp(logp)?;
                let centers = g.constant(Tensor::new(&[c.bins, 1], c.centers())?);
                Ok(g.matmul(p, centers)?)
            }
        }
    }

    pub fn q(&self, head: usize, g: &mut Graph, states: Var, actions: Var, bind: Bind) -> Result<Var> {
        let out = self.head_forward(head, g, states, actions, bind)?;
        self.q_from_output(g, out.output)
    }

    /// Both heads' Q values as plain tensors.
    pub fn q_values(&self, states: &Tensor, actions: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let s = g.constant(states.clone());
        let a = g.constant(actions.clone());
        let q1 = self.q(0, &mut g, s, a, Bind::Constants)?;
        let q2 = self.q(1, &mut g, s, a, Bind::Constants)?;
        Ok((g.value(q1).clone(), g.value(q2).clone()))
    }

    pub fn polyak_from(&mut self, online: &Critic, tau: f32) {
        for (t, o) in self.heads.iter_mut().zip(&online.heads) {
            t.polyak_from(o, tau);
        }
    }
}

/// State-value network with a scalar output.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueNet {
    pub net: Mlp,
}

impl ValueNet {
    pub fn new(state_dim: usize, hidden_dim: usize, layers: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            net: Mlp::build(MlpSpec::new(state_dim, 1, hidden_dim, layers), rng)?,
        })
    }

    pub fn predict(&self, states: &Tensor) -> Result<Tensor> {
        self.net.predict(states)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], d: &[f32]) -> Tensor {
        Tensor::new(shape, d.to_vec()).unwrap()
    }

    #[test]
    fn layer_order_norm_then_dropout() {
        let spec = MlpSpec::new(3, 2, 8, 2).with_norm(NormKind::Layer).with_dropout(0.1);
        let net = Mlp::build(spec, &mut Rng::new(0, 0)).unwrap();
        let l = net.layers();
        assert_eq!(
            &l[..4],
            &[
                LayerKind::Linear { inputs: 3, outputs: 8, spectral: false },
                LayerKind::Relu,
                LayerKind::Norm(NormKind::Layer),
                LayerKind::Dropout(0.1),
            ]
        );
    }

    #[test]
    fn orthogonal_init_is_orthogonal() {
        let w = orthogonal(6, 4, 1.0, &mut Rng::new(1, 0));
        for i in 0..4 {
            for j in 0..4 {
                let d: f32 = (0..6).map(|r| w.get(r, i) * w.get(r, j)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-5);
            }
        }
        let wide = orthogonal(3, 5, 2.0, &mut Rng::new(1, 0));
        for i in 0..3 {
            let d: f32 = wide.row(i).iter().map(|x| x * x).sum();
            assert!((d - 4.0).abs() < 1e-4);
        }
    }

    #[test]
    fn hand_forward_two_by_two() {
        let mut net = Mlp::build(MlpSpec::new(2, 1, 2, 1), &mut Rng::new(0, 0)).unwrap();
        net.hidden[0].linear.weight = t(&[2, 2], &[1.0, -1.0, 2.0, 0.5]);
        net.hidden[0].linear.bias = t(&[1, 2], &[0.0, -1.0]);
        net.output.weight = t(&[2, 1], &[1.0, 2.0]);
        net.output.bias = t(&[1, 1], &[0.5]);
        // x = [1, 1]: z = [1+2, -1+0.5-1] = [3, -1.5] → relu [3, 0] → 3 + 0.5
        let x = t(&[1, 2], &[1.0, 1.0]);
        assert_eq!(net.predict(&x).unwrap().data(), &[3.5]);
        assert_eq!(net.penultimate_features(&x).unwrap().data(), &[3.0, 0.0]);
    }

    #[test]
    fn zero_init_outputs_bias() {
        let mut spec = MlpSpec::new(3, 2, 4, 2);
        spec.init = Init::Zeros;
        let net = Mlp::build(spec, &mut Rng::new(0, 0)).unwrap();
        let out = net.predict(&Rng::new(1, 0).normal_tensor(&[5, 3])).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tanh_actor_is_bounded_and_deterministic() {
        let spec = MlpSpec::new(4, 2, 16, 2).with_head(Head::Tanh);
        let mut actor = Actor::new(spec, &mut Rng::new(2, 0)).unwrap();
        actor.net.output.weight = actor.net.output.weight.map(|w| w * 50.0);
        let x = Rng::new(3, 0).uniform_tensor(&[1000, 4], -10.0, 10.0);
        let a = actor.act(&x).unwrap();
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(a, actor.act(&x).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let actor = Actor::new(MlpSpec::new(4, 2, 8, 1).with_head(Head::Tanh), &mut Rng::new(0, 0)).unwrap();
        assert!(actor.act(&Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn group_count_validated_at_build() {
        let mut spec = MlpSpec::new(4, 2, 6, 1).with_norm(NormKind::Group);
        spec.group_count = 4;
        assert!(matches!(Mlp::build(spec, &mut Rng::new(0, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        for norm in NormKind::ALL {
            let spec = MlpSpec::new(3, 2, 8, 2).with_norm(norm).with_dropout(0.2).with_head(Head::Gaussian);
            let net = Mlp::build(spec, &mut Rng::new(4, 0)).unwrap();
            let mut buf = Vec::new();
            net.write_checkpoint(&mut buf).unwrap();
            let mut back = Mlp::read_checkpoint(&buf[..]).unwrap();
            // build-time init settings are not part of the file
            back.spec.init = net.spec.init;
            back.spec.output_gain = net.spec.output_gain;
            assert_eq!(back, net);
            assert!(Mlp::read_checkpoint(&buf[..buf.len() - 3]).is_err());
        }
    }

    #[test]
    fn categorical_centers() {
        let c = CategoricalSupport { bins: 5, v_min: -1.0, v_max: 1.0 };
        assert_eq!(c.centers(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(CategoricalSupport { bins: 1, v_min: 0.0, v_max: 1.0 }.validate().is_err());
    }
}
