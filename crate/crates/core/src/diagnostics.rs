//! Actor-internal metrics on penultimate features: dead-unit fraction,
//! feature norm, effective rank, and a plasticity probe.

use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::data::TransitionDataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::networks::{Actor, Bind};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

pub const SRANK_DELTA: f64 = 0.99;
pub const PLASTICITY_STEPS: usize = 100;
/// Splits larger than this are uniformly subsampled.
pub const MAX_DIAGNOSTIC_BATCH: usize = 4096;

/// Fraction of columns (units) that are exactly zero for every row.
pub fn dead_fraction_of(features: &Tensor) -> f64 {
    let (rows, cols) = (features.rows(), features.cols());
    if cols == 0 {
        return 0.0;
    }
    let dead = (0..cols)
        .filter(|&j| (0..rows).all(|i| features.get(i, j) == 0.0))
        .count();
    dead as f64 / cols as f64
}

/// Mean over rows of the row L2 norm.
pub fn feature_norm_of(features: &Tensor) -> f64 {
    let rows = features.rows();
    if rows == 0 {
        return 0.0;
    }
    let total: f64 = (0..rows)
        .map(|i| features.row(i).iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt())
        .sum();
    total / rows as f64
}

fn nonempty(states: &Tensor) -> Result<()> {
    if states.rows() == 0 {
        return Err(Error::Invalid("diagnostics need a nonempty state batch".into()));
    }
    Ok(())
}

pub fn dead_neuron_fraction(actor: &Actor, states: &Tensor) -> Result<f64> {
    nonempty(states)?;
    Ok(dead_fraction_of(&actor.net.penultimate_features(states)?))
}

pub fn feature_norm(actor: &Actor, states: &Tensor) -> Result<f64> {
    nonempty(states)?;
    Ok(feature_norm_of(&actor.net.penultimate_features(states)?))
}

/// Upper-triangular factor of a Householder QR of the row-major `m × n`
/// matrix `a` (`m ≥ n`), as `n × n` row-major.
fn qr_r(mut a: Vec<f64>, m: usize, n: usize) -> Vec<f64> {
    for k in 0..n {
        let norm: f64 = (k..m).map(|i| a[i * n + k] * a[i * n + k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[k * n + k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a[i * n + k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..n {
            let dot: f64 = v.iter().enumerate().map(|(r, vi)| vi * a[(k + r) * n + j]).sum();
            let f = 2.0 * dot / vnorm2;
            for (r, vi) in v.iter().enumerate() {
                a[(k + r) * n + j] -= f * vi;
            }
        }
    }
    let mut r = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            r[i * n + j] = a[i * n + j];
        }
    }
    r
}

/// Singular values of a row-major `m × n` matrix in descending order.
/// Tall inputs are first reduced to their `n × n` R factor; the rest is
/// one-sided Jacobi on columns.
pub fn singular_values(data: &[f64], m: usize, n: usize) -> Vec<f64> {
    let (mut a, rows, cols) = if m >= n {
        let r = if m > n { qr_r(data.to_vec(), m, n) } else { data.to_vec() };
        (r, n, n)
    } else {
        // singular values of Aᵀ are the same
        let mut t = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                t[j * m + i] = data[i * n + j];
            }
        }
        let r = qr_r(t, n, m);
        (r, m, m)
    };
    // columns stored contiguously for the rotations
    let mut c: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| a[i * cols + j]).collect()).collect();
    a.clear();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&c[p], &c[q]);
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for i in 0..rows {
                        al += cp[i] * cp[i];
                        be += cq[i] * cq[i];
                        ga += cp[i] * cq[i];
                    }
                    (al, be, ga)
                };
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                let (lo, hi) = c.split_at_mut(q);
                let (cp, cq) = (&mut lo[p], &mut hi[0]);
                for i in 0..rows {
                    let (x, y) = (cp[i], cq[i]);
                    cp[i] = cs * x - sn * y;
                    cq[i] = sn * x + cs * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<f64> = c.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Smallest `k` with `Σ_{i≤k} σ_i / Σ σ_i ≥ δ`; a zero matrix gives 0.
pub fn srank_from_singular_values(sv: &[f64], delta: f64) -> usize {
    let total: f64 = sv.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (k, s) in sv.iter().enumerate() {
        acc += s;
        if acc / total >= delta {
            return k + 1;
        }
    }
    sv.len()
}

pub fn srank(features: &Tensor, delta: f64) -> usize {
    let data: Vec<f64> = features.data().iter().map(|&x| x as f64).collect();
    srank_from_singular_values(&singular_values(&data, features.rows(), features.cols()), delta)
}

fn bc_loss_value(actor: &Actor, states: &Tensor, actions: &Tensor) -> Result<f32> {
    let pred = actor.act(states)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(actions.data())
        .map(|(p, a)| ((p - a) as f64).powi(2))
        .sum();
    Ok((sum / states.rows() as f64) as f32)
}

/// BC losses of a plasticity probe: entry `k` is the loss before update
/// `k`, the last entry is the loss after the final update.
#[derive(Clone, Debug, PartialEq)]
pub struct PlasticityTrace {
    pub losses: Vec<f32>,
}

impl PlasticityTrace {
    pub fn steps(&self) -> usize {
        self.losses.len() - 1
    }

    pub fn initial(&self) -> f32 {
        self.losses[0]
    }

    pub fn last(&self) -> f32 {
        *self.losses.last().expect("nonempty trace")
    }
}

/// Fits a clone of `actor` to `(states, actions)` with `steps` full-batch Adam
/// steps on the behavior-cloning loss in eval mode. `actor` is not modified.
pub fn plasticity_probe(
    actor: &Actor,
    states: &Tensor,
    actions: &Tensor,
    steps: usize,
    lr: f32,
) -> Result<PlasticityTrace> {
    nonempty(states)?;
    let mut probe = actor.clone();
    let mut adam = AdamState::new(AdamConfig::with_lr(lr), &probe.net.params());
    let b = states.rows() as f32;
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let mut g = Graph::new();
        let s = g.constant(states.clone());
        let out = probe.forward(&mut g, s, Bind::Params, None)?;
        let a = g.constant(actions.clone());
        let d = g.sub(out.output, a)?;
        let sq = g.square(d)?;
        let total = g.sum(sq)?;
        let loss = g.scale(total, 1.0 / b)?;
        losses.push(g.value(loss).item());
        let mut grads = g.backward(loss)?;
        let grads: Vec<Tensor> = out.params.iter().map(|&v| grads.take(v)).collect();
        adam.step(&mut probe.net.params_mut(), &grads)?;
    }
    losses.push(bc_loss_value(&probe, states, actions)?);
    Ok(PlasticityTrace { losses })
}

/// Final loss of [`plasticity_probe`].
pub fn plasticity_loss(actor: &Actor, states: &Tensor, actions: &Tensor, steps: usize, lr: f32) -> Result<f32> {
    Ok(plasticity_probe(actor, states, actions, steps, lr)?.last())
}

/// `val / train`, or `None` when the train side is zero.
pub fn ratio(val: f64, train: f64) -> Option<f64> {
    if train == 0.0 {
        None
    } else {
        Some(val / train)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub step: u64,
    pub dead_fraction_train: f64,
    pub dead_fraction_val: f64,
    pub feature_norm_train: f64,
    pub feature_norm_val: f64,
    pub srank_train: usize,
    pub srank_val: usize,
    /// Probe run on validation data only.
    pub plasticity_loss: f32,
    pub dead_fraction_ratio: Option<f64>,
    pub feature_norm_ratio: Option<f64>,
    pub srank_ratio: Option<f64>,
}

/// States and actions at `indices`, uniformly subsampled (without
/// replacement, order kept) to at most [`MAX_DIAGNOSTIC_BATCH`].
pub fn diagnostic_batch(ds: &TransitionDataset, indices: &[usize], seed: u64) -> (Tensor, Tensor) {
    let mut idx = indices.to_vec();
    if idx.len() > MAX_DIAGNOSTIC_BATCH {
        Rng::stream(seed, Stream::Split).shuffle(&mut idx);
        idx.truncate(MAX_DIAGNOSTIC_BATCH);
        idx.sort_unstable();
    }
    let b = ds.batch(&idx);
    (b.states, b.actions)
}

pub struct DiagnosticsInput<'a> {
    pub train_states: &'a Tensor,
    pub val_states: &'a Tensor,
    pub val_actions: &'a Tensor,
    pub plasticity_steps: usize,
    /// Learning rate of the probe's Adam; the actor optimizer's.
    pub lr: f32,
}

impl<'a> DiagnosticsInput<'a> {
    pub fn new(train_states: &'a Tensor, val_states: &'a Tensor, val_actions: &'a Tensor, lr: f32) -> Self {
        Self {
            train_states,
            val_states,
            val_actions,
            plasticity_steps: PLASTICITY_STEPS,
            lr,
        }
    }
}

pub fn diagnostics_ratio_report(actor: &Actor, input: &DiagnosticsInput<'_>, step: u64) -> Result<DiagnosticsReport> {
    nonempty(input.train_states)?;
    nonempty(input.val_states)?;
    let ft = actor.net.penultimate_features(input.train_states)?;
    let fv = actor.net.penultimate_features(input.val_states)?;
    let (dt, dv) = (dead_fraction_of(&ft), dead_fraction_of(&fv));
    let (nt, nv) = (feature_norm_of(&ft), feature_norm_of(&fv));
    let (st, sv) = (srank(&ft, SRANK_DELTA), srank(&fv, SRANK_DELTA));
    let plasticity = plasticity_loss(actor, input.val_states, input.val_actions, input.plasticity_steps, input.lr)?;
    Ok(DiagnosticsReport {
        step,
        dead_fraction_train: dt,
        dead_fraction_val: dv,
        feature_norm_train: nt,
        feature_norm_val: nv,
        srank_train: st,
        srank_val: sv,
        plasticity_loss: plasticity,
        dead_fraction_ratio: ratio(dv, dt),
        feature_norm_ratio: ratio(nv, nt),
        srank_ratio: ratio(sv as f64, st as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{Head, MlpSpec};

    fn tiny_actor(weight: [f32; 4], bias: [f32; 2]) -> Actor {
        let spec = MlpSpec::new(2, 1, 2, 1).with_head(Head::Tanh);
        let mut actor = Actor::new(spec, &mut Rng::new(0, 0)).unwrap();
        actor.net.hidden[0].linear.weight = Tensor::new(&[2, 2], weight.to_vec()).unwrap();
        actor.net.hidden[0].linear.bias = Tensor::new(&[1, 2], bias.to_vec()).unwrap();
        actor
    }

    #[test]
    fn dead_fraction_hand_cases() {
        let f = Tensor::from_rows(&[&[0.0, 1.0], &[0.0, 3.0]]).unwrap();
        assert_eq!(dead_fraction_of(&f), 0.5);
        let s = Tensor::from_rows(&[&[0.3, -0.2], &[1.0, 2.0]]).unwrap();
        assert_eq!(dead_neuron_fraction(&tiny_actor([0.0; 4], [0.5, 0.1]), &s).unwrap(), 0.0);
        let pos = Tensor::from_rows(&[&[0.3, 0.2], &[1.0, 2.0]]).unwrap();
        let dead = tiny_actor([-1.0; 4], [-0.1, -0.1]);
        assert_eq!(dead_neuron_fraction(&dead, &pos).unwrap(), 1.0);
    }

    #[test]
    fn feature_norm_hand_cases() {
        assert_eq!(feature_norm_of(&Tensor::from_rows(&[&[3.0, 4.0]]).unwrap()), 5.0);
        assert_eq!(feature_norm_of(&Tensor::zeros(&[3, 2])), 0.0);
        let f = Tensor::from_rows(&[&[1.0, 2.0], &[-0.5, 0.25]]).unwrap();
        let twice = f.map(|x| 2.0 * x);
        assert!((feature_norm_of(&twice) - 2.0 * feature_norm_of(&f)).abs() < 1e-12);
    }

    #[test]
    fn srank_hand_cases() {
        assert_eq!(srank(&Tensor::eye(4), 0.99), 4);
        let r1 = Tensor::from_rows(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]]).unwrap();
        assert_eq!(srank(&r1, 0.99), 1);
        assert_eq!(srank(&Tensor::zeros(&[3, 3]), 0.99), 0);
        assert_eq!(srank(&Tensor::eye(4), 0.75), 3);
    }

    #[test]
    fn singular_values_of_diagonal() {
        let sv = singular_values(&[3.0, 0.0, 0.0, 0.0, -5.0, 0.0], 2, 3);
        assert_eq!(sv.len(), 2);
        assert!((sv[0] - 5.0).abs() < 1e-12 && (sv[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn plasticity_zero_steps_is_initial_loss() {
        let actor = tiny_actor([0.5, -0.2, 0.1, 0.7], [0.1, 0.0]);
        let s = Tensor::from_rows(&[&[0.3, 0.2], &[1.0, -2.0]]).unwrap();
        let a = Tensor::from_rows(&[&[0.5], &[-0.5]]).unwrap();
        let init = bc_loss_value(&actor, &s, &a).unwrap();
        assert_eq!(plasticity_loss(&actor, &s, &a, 0, 1e-3).unwrap(), init);
        let before = actor.clone();
        let after = plasticity_loss(&actor, &s, &a, PLASTICITY_STEPS, 1e-2).unwrap();
        assert!(after < init);
        assert_eq!(actor, before);
    }

    #[test]
    fn ratios_guard_zero_train() {
        assert_eq!(ratio(0.3, 0.0), None);
        assert_eq!(ratio(0.3, 0.6), Some(0.5));
    }
}
