//! ReBRAC-style and IQL-style offline actor-critic trainers with the actor
//! regularizer hooks wired in.
//!
//! Regularizer hooks only touch the actor: input noise on actor states,
//! objective noise inside the BC / AWR term, the elastic-net penalty on the
//! actor loss, and decayed gradient noise before the actor's Adam step.
//! Inactive hooks record no ops and draw no random numbers.

use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::data::{Batch, SplitDataset, TransitionDataset};
use crate::error::{ComputeError, Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::networks::{Actor, Bind, CategoricalSupport, Critic, Head, MlpSpec, TrainCtx, ValueNet};
use crate::regularizers::{
    add_gradient_noise, elastic_net_penalty, gradient_noise_scale, inject_noise, NormKind, RegularizerConfig,
};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticLossKind {
    Mse,
    Categorical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RebracConfig {
    pub actor_bc_coef: f32,
    pub critic_bc_coef: f32,
    pub policy_noise: f32,
    pub noise_clip: f32,
    pub policy_update_delay: u64,
    /// Defaults to the task's discount when absent.
    pub discount: Option<f32>,
    pub tau: f32,
    pub batch_size: usize,
    pub actor_lr: f32,
    pub critic_lr: f32,
    pub hidden_dim: usize,
    pub num_hidden_layers: usize,
    pub normalize_q: bool,
    pub critic_layer_norm: bool,
    pub critic_loss: CriticLossKind,
    pub critic_bins: usize,
    /// Categorical support bounds; estimated from the dataset when absent.
    pub critic_v_min: Option<f32>,
    pub critic_v_max: Option<f32>,
}

impl Default for RebracConfig {
    fn default() -> Self {
        Self {
            actor_bc_coef: 0.1,
            critic_bc_coef: 0.01,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_update_delay: 2,
            discount: None,
            tau: 5e-3,
            batch_size: 1024,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            hidden_dim: 256,
            num_hidden_layers: 3,
            normalize_q: true,
            critic_layer_norm: true,
            critic_loss: CriticLossKind::Categorical,
            critic_bins: 101,
            critic_v_min: None,
            critic_v_max: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IqlConfig {
    pub expectile: f32,
    pub temperature: f32,
    pub max_weight: f32,
    pub discount: Option<f32>,
    pub tau: f32,
    pub batch_size: usize,
    pub actor_lr: f32,
    pub critic_lr: f32,
    pub value_lr: f32,
    pub lr_schedule: LrSchedule,
    pub hidden_dim: usize,
    pub num_hidden_layers: usize,
}

impl Default for IqlConfig {
    fn default() -> Self {
        Self {
            expectile: 0.7,
            temperature: 3.0,
            max_weight: 100.0,
            discount: None,
            tau: 5e-3,
            batch_size: 256,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            value_lr: 3e-4,
            lr_schedule: LrSchedule::Cosine,
            hidden_dim: 256,
            num_hidden_layers: 2,
        }
    }
}

fn check_discount(name: &str, d: Option<f32>) -> Result<()> {
    match d {
        Some(g) if !(g > 0.0 && g < 1.0) => Err(Error::Config(format!("{name}.discount: must lie in (0, 1), got {g}"))),
        _ => Ok(()),
    }
}

fn check_tau(name: &str, tau: f32) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name}.tau: must lie in (0, 1], got {tau}")))
    }
}

fn check_positive(path: &str, v: f32) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{path}: must be > 0, got {v}")))
    }
}

impl RebracConfig {
    pub fn validate(&self) -> Result<()> {
        check_discount("rebrac", self.discount)?;
        check_tau("rebrac", self.tau)?;
        if self.policy_update_delay < 1 {
            return Err(Error::Config("rebrac.policy_update_delay: must be >= 1".into()));
        }
        if self.batch_size == 0 || self.hidden_dim == 0 || self.num_hidden_layers == 0 {
            return Err(Error::Config("rebrac: batch_size, hidden_dim and num_hidden_layers must be >= 1".into()));
        }
        check_positive("rebrac.actor_lr", self.actor_lr)?;
        check_positive("rebrac.critic_lr", self.critic_lr)?;
        for (k, v) in [
            ("actor_bc_coef", self.actor_bc_coef),
            ("critic_bc_coef", self.critic_bc_coef),
            ("policy_noise", self.policy_noise),
            ("noise_clip", self.noise_clip),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("rebrac.{k}: must be >= 0, got {v}")));
            }
        }
        if self.critic_loss == CriticLossKind::Categorical {
            if self.critic_bins < 2 {
                return Err(Error::Config("rebrac.critic_bins: must be >= 2".into()));
            }
            if let (Some(lo), Some(hi)) = (self.critic_v_min, self.critic_v_max) {
                if !(lo < hi) {
                    return Err(Error::Config("rebrac.critic_v_min: must be below critic_v_max".into()));
                }
            }
        }
        Ok(())
    }
}

impl IqlConfig {
    pub fn validate(&self) -> Result<()> {
        check_discount("iql", self.discount)?;
        check_tau("iql", self.tau)?;
        if !(self.expectile > 0.0 && self.expectile < 1.0) {
            return Err(Error::Config(format!("iql.expectile: must lie in (0, 1), got {}", self.expectile)));
        }
        check_positive("iql.max_weight", self.max_weight)?;
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::Config("iql.temperature: must be >= 0".into()));
        }
        if self.batch_size == 0 || self.hidden_dim == 0 || self.num_hidden_layers == 0 {
            return Err(Error::Config("iql: batch_size, hidden_dim and num_hidden_layers must be >= 1".into()));
        }
        check_positive("iql.actor_lr", self.actor_lr)?;
        check_positive("iql.critic_lr", self.critic_lr)?;
        check_positive("iql.value_lr", self.value_lr)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AlgorithmConfig {
    Rebrac(RebracConfig),
    Iql(IqlConfig),
}

impl AlgorithmConfig {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmConfig::Rebrac(_) => "rebrac",
            AlgorithmConfig::Iql(_) => "iql",
        }
    }

    pub fn batch_size(&self) -> usize {
        match self {
            AlgorithmConfig::Rebrac(c) => c.batch_size,
            AlgorithmConfig::Iql(c) => c.batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AlgorithmConfig::Rebrac(c) => c.validate(),
            AlgorithmConfig::Iql(c) => c.validate(),
        }
    }
}

/// One step's losses; appended to `losses.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    /// Absent on steps without an actor update.
    pub actor_loss: Option<f32>,
    pub critic_loss: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_loss: Option<f32>,
    pub bc_term: f32,
    pub penalty_term: f32,
    pub noise_scale: f32,
}

/// Expectile loss `mean(|τ − 1{u<0}|·u²)` over residuals `u = target − v`.
pub fn expectile_loss(residuals: &[f32], tau: f32) -> f32 {
    let s: f64 = residuals
        .iter()
        .map(|&u| {
            let w = if u < 0.0 { 1.0 - tau } else { tau };
            (w * u * u) as f64
        })
        .sum();
    (s / residuals.len() as f64) as f32
}

/// Two-hot encoding of `value` (clamped to the support) over the bin centers.
pub fn two_hot(value: f32, support: &CategoricalSupport) -> Vec<f32> {
    let mut out = vec![0.0; support.bins];
    let v = value.clamp(support.v_min, support.v_max);
    let step = (support.v_max - support.v_min) / (support.bins - 1) as f32;
    let pos = (v - support.v_min) / step;
    let lo = (pos.floor() as usize).min(support.bins - 1);
    let frac = pos - lo as f32;
    if lo + 1 >= support.bins || frac <= 0.0 {
        out[lo] = 1.0;
    } else {
        out[lo] = 1.0 - frac;
        out[lo + 1] = frac;
    }
    out
}

/// Cross-entropy between two-hot targets and the softmax of `logits`, averaged
/// over the batch.
pub fn categorical_critic_loss(
    g: &mut Graph,
    logits: Var,
    targets: &[f32],
    support: &CategoricalSupport,
) -> Result<Var> {
    let b = targets.len();
    let mut enc = Vec::with_capacity(b * support.bins);
    for &t in targets {
        enc.extend(two_hot(t, support));
    }
    let enc = g.constant(Tensor::new(&[b, support.bins], enc)?);
    let logp = g.log_softmax_rows(logits)?;
    let prod = g.mul(enc, logp)?;
    let s = g.sum(prod)?;
    Ok(g.scale(s, -1.0 / b as f32)?)
}

/// Elementwise minimum of the twin estimates.
pub fn twin_min(q1: &Tensor, q2: &Tensor) -> Tensor {
    let data = q1.data().iter().zip(q2.data()).map(|(a, b)| a.min(*b)).collect();
    Tensor::new(q1.shape(), data).expect("same shape")
}

/// Range of discounted returns-to-go in the dataset, widened by 10% of its
/// span on each side.
pub fn estimate_value_range(ds: &TransitionDataset, discount: f32) -> (f32, f32) {
    let n = ds.len();
    let mut rtg = vec![0.0f64; n];
    for i in (0..n).rev() {
        let continues = !ds.dones[i] && i + 1 < n && ds.next_state(i) == ds.state(i + 1);
        let next = if continues { rtg[i + 1] } else { 0.0 };
        rtg[i] = ds.rewards[i] as f64 + discount as f64 * next;
    }
    let lo = rtg.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = rtg.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let pad = 0.1 * (hi - lo).max(1e-3);
    ((lo - pad) as f32, (hi + pad) as f32)
}

fn mse_to(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    let t = g.constant(target.clone());
    let d = g.sub(pred, t)?;
    let sq = g.square(d)?;
    Ok(g.mean(sq)?)
}

fn collect_grads(grads: &mut Gradients, vars: &[Var]) -> Vec<Tensor> {
    vars.iter().map(|&v| grads.take(v)).collect()
}

fn at_step(step: u64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Compute(source) => Error::Numeric { step, source },
        other => other,
    }
}

/// Shared actor-side regularizer plumbing.
struct ActorHooks {
    reg: RegularizerConfig,
    dropout_rng: Rng,
    input_rng: Rng,
    objective_rng: Rng,
    gradient_rng: Rng,
}

impl ActorHooks {
    fn new(reg: &RegularizerConfig, seed: u64) -> Self {
        Self {
            reg: reg.clone(),
            dropout_rng: Rng::stream(seed, Stream::Dropout),
            input_rng: Rng::stream(seed, Stream::InputNoise),
            objective_rng: Rng::stream(seed, Stream::ObjectiveNoise),
            gradient_rng: Rng::stream(seed, Stream::GradientNoise),
        }
    }

    fn actor_spec(&self, state_dim: usize, action_dim: usize, hidden: usize, layers: usize, head: Head) -> MlpSpec {
        let mut spec = MlpSpec::new(state_dim, action_dim, hidden, layers)
            .with_head(head)
            .with_norm(self.reg.norm)
            .with_dropout(self.reg.dropout);
        spec.output_gain = 0.01;
        spec
    }

    fn noisy_states(&mut self, states: &Tensor) -> Tensor {
        inject_noise(states, self.reg.input_noise, &mut self.input_rng)
    }

    /// ω-weighted elastic net over the actor's weight matrices, if active.
    fn penalty(&self, g: &mut Graph, actor: &Actor, params: &[Var]) -> Result<Option<Var>> {
        if self.reg.weight_decay == 0.0 {
            return Ok(None);
        }
        let weights: Vec<Var> = actor.net.weight_indices().into_iter().map(|i| params[i]).collect();
        Ok(Some(elastic_net_penalty(
            g,
            &weights,
            self.reg.weight_decay,
            self.reg.weight_decay_alpha,
        )?))
    }

    fn perturb_gradients(&mut self, grads: &mut [Tensor], t: u64) -> f32 {
        if self.reg.gradient_noise == 0.0 {
            return 0.0;
        }
        let scale = gradient_noise_scale(self.reg.gradient_noise, t, self.reg.gradient_noise_decay);
        add_gradient_noise(grads, scale, &mut self.gradient_rng);
        scale
    }
}

fn adam_for(params: Vec<&Tensor>, lr: f32) -> AdamState {
    AdamState::new(AdamConfig::with_lr(lr), &params)
}

fn step_critic(critic: &mut Critic, adam: &mut AdamState, grads: &[Tensor], lr: f32) -> Result<(), ComputeError> {
    let [h1, h2] = &mut critic.heads;
    let mut params = h1.params_mut();
    params.extend(h2.params_mut());
    adam.step_with_lr(&mut params, grads, lr)
}

/// ReBRAC-style trainer: twin critics with target smoothing and a BC-penalized
/// TD target; a delayed deterministic actor with a BC term.
#[derive(Clone)]
pub struct RebracTrainer {
    pub config: RebracConfig,
    pub discount: f32,
    pub actor: Actor,
    pub target_actor: Actor,
    pub critic: Critic,
    pub target_critic: Critic,
    actor_adam: AdamState,
    critic_adam: AdamState,
    hooks_seed: u64,
    hooks: ActorHooksState,
    smoothing_rng: Rng,
    t: u64,
}

// `ActorHooks` holds RNGs only; wrapped so the trainer stays `Clone`.
#[derive(Clone)]
struct ActorHooksState {
    reg: RegularizerConfig,
    rngs: [Rng; 4],
}

impl ActorHooksState {
    fn from(h: ActorHooks) -> Self {
        Self {
            reg: h.reg,
            rngs: [h.dropout_rng, h.input_rng, h.objective_rng, h.gradient_rng],
        }
    }

    fn hooks(&self) -> ActorHooks {
        let [a, b, c, d] = self.rngs.clone();
        ActorHooks {
            reg: self.reg.clone(),
            dropout_rng: a,
            input_rng: b,
            objective_rng: c,
            gradient_rng: d,
        }
    }
}

impl RebracTrainer {
    pub fn new(
        config: &RebracConfig,
        reg: &RegularizerConfig,
        state_dim: usize,
        action_dim: usize,
        discount: f32,
        value_range: Option<(f32, f32)>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        reg.validate()?;
        let mut init = Rng::stream(seed, Stream::Init);
        let hooks = ActorHooks::new(reg, seed);
        let spec = hooks.actor_spec(state_dim, action_dim, config.hidden_dim, config.num_hidden_layers, Head::Tanh);
        let actor = Actor::new(spec, &mut init)?;
        let categorical = match config.critic_loss {
            CriticLossKind::Mse => None,
            CriticLossKind::Categorical => {
                let (lo, hi) = match (config.critic_v_min, config.critic_v_max, value_range) {
                    (Some(lo), Some(hi), _) => (lo, hi),
                    (lo, hi, Some((elo, ehi))) => (lo.unwrap_or(elo), hi.unwrap_or(ehi)),
                    _ => {
                        return Err(Error::Config(
                            "rebrac: categorical critic needs critic_v_min/critic_v_max or a dataset".into(),
                        ))
                    }
                };
                Some(CategoricalSupport {
                    bins: config.critic_bins,
                    v_min: lo,
                    v_max: hi,
                })
            }
        };
        let critic_norm = if config.critic_layer_norm { NormKind::Layer } else { NormKind::None };
        let critic = Critic::new(
            state_dim,
            action_dim,
            config.hidden_dim,
            config.num_hidden_layers,
            critic_norm,
            categorical,
            &mut init,
        )?;
        let actor_adam = adam_for(actor.net.params(), config.actor_lr);
        let critic_adam = adam_for(
            critic.heads.iter().flat_map(|h| h.params()).collect(),
            config.critic_lr,
        );
        Ok(Self {
            config: config.clone(),
            discount,
            target_actor: actor.clone(),
            actor,
            target_critic: critic.clone(),
            critic,
            actor_adam,
            critic_adam,
            hooks_seed: seed,
            hooks: ActorHooksState::from(hooks),
            smoothing_rng: Rng::stream(seed, Stream::TargetSmoothing),
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn seed(&self) -> u64 {
        self.hooks_seed
    }

    /// TD target `r + γ(1−d)(min(Q₁′, Q₂′)(s′, ã′) − β_critic‖ã′ − a‖²)`.
    pub fn td_target(&mut self, batch: &Batch) -> Result<Tensor> {
        let c = &self.config;
        let mut next = self.target_actor.act(&batch.next_states)?;
        for x in next.data_mut() {
            let eps = (self.smoothing_rng.normal() * c.policy_noise).clamp(-c.noise_clip, c.noise_clip);
            *x = (*x + eps).clamp(-1.0, 1.0);
        }
        let (q1, q2) = self.target_critic.q_values(&batch.next_states, &next)?;
        let qmin = twin_min(&q1, &q2);
        let m = next.cols();
        let mut y = Vec::with_capacity(next.rows());
        for i in 0..next.rows() {
            let pen: f32 = (0..m)
                .map(|j| {
                    let d = next.get(i, j) - batch.actions.get(i, j);
                    d * d
                })
                .sum();
            let cont = 1.0 - batch.dones.data()[i];
            y.push(batch.rewards.data()[i] + self.discount * cont * (qmin.data()[i] - c.critic_bc_coef * pen));
        }
        Ok(Tensor::new(&[next.rows(), 1], y)?)
    }

    fn critic_update(&mut self, batch: &Batch) -> Result<f32> {
        let y = self.td_target(batch)?;
        let mut g = Graph::new();
        let s = g.constant(batch.states.clone());
        let a = g.constant(batch.actions.clone());
        let mut vars = Vec::new();
        let mut total: Option<Var> = None;
        for head in 0..2 {
            let out = self.critic.head_forward(head, &mut g, s, a, Bind::Params)?;
            vars.extend(out.params.iter().copied());
            let loss = match &self.critic.categorical {
                None => mse_to(&mut g, out.output, &y)?,
                Some(sup) => categorical_critic_loss(&mut g, out.output, y.data(), sup)?,
            };
            total = Some(match total {
                Some(t) => g.add(t, loss)?,
                None => loss,
            });
        }
        let total = total.expect("two heads");
        let value = g.value(total).item();
        let mut grads = g.backward(total)?;
        let grads = collect_grads(&mut grads, &vars);
        let lr = self.critic_adam.config.lr;
        step_critic(&mut self.critic, &mut self.critic_adam, &grads, lr)?;
        Ok(value)
    }

    fn actor_update(&mut self, batch: &Batch) -> Result<(f32, f32, f32, f32)> {
        let mut hooks = self.hooks.hooks();
        let states_in = hooks.noisy_states(&batch.states);
        let mut g = Graph::new();
        let s_in = g.constant(states_in);
        let mut ctx = TrainCtx::new(&mut hooks.dropout_rng);
        let out = self.actor.forward(&mut g, s_in, Bind::Params, Some(&mut ctx))?;
        let updates = std::mem::take(&mut ctx.updates);
        let s = g.constant(batch.states.clone());
        let q = self.critic.q(0, &mut g, s, out.output, Bind::Constants)?;
        // BC term (a_θ − a + ν_ob·ε)², summed over action dims, mean over batch
        let bc_target = if hooks.reg.objective_noise > 0.0 {
            let eps = hooks.objective_rng.normal_tensor(batch.actions.shape());
            let nu = hooks.reg.objective_noise;
            let data = batch.actions.data().iter().zip(eps.data()).map(|(a, e)| a - nu * e).collect();
            Tensor::new(batch.actions.shape(), data)?
        } else {
            batch.actions.clone()
        };
        let b = batch.states.rows() as f32;
        let target = g.constant(bc_target);
        let diff = g.sub(out.output, target)?;
        let sq = g.square(diff)?;
        let bc_sum = g.sum(sq)?;
        let bc = g.scale(bc_sum, 1.0 / b)?;
        let q_mean = g.mean(q)?;
        let lambda = if self.config.normalize_q {
            let mean_abs = g.value(q).data().iter().map(|v| v.abs()).sum::<f32>() / b;
            1.0 / mean_abs.max(1e-6)
        } else {
            1.0
        };
        let bc_scaled = g.scale(bc, self.config.actor_bc_coef)?;
        let q_scaled = g.scale(q_mean, lambda)?;
        let mut loss = g.sub(bc_scaled, q_scaled)?;
        let mut penalty = 0.0;
        if let Some(p) = hooks.penalty(&mut g, &self.actor, &out.params)? {
            penalty = g.value(p).item();
            loss = g.add(loss, p)?;
        }
        let loss_value = g.value(loss).item();
        let bc_value = g.value(bc).item();
        let mut grads = g.backward(loss)?;
        let mut grads = collect_grads(&mut grads, &out.params);
        let noise = hooks.perturb_gradients(&mut grads, self.t);
        let mut params = self.actor.net.params_mut();
        self.actor_adam.step(&mut params, &grads)?;
        self.actor.net.apply_updates(updates);
        self.hooks = ActorHooksState::from(hooks);
        Ok((loss_value, bc_value, penalty, noise))
    }

    pub fn step(&mut self, batch: &Batch) -> Result<LossReport> {
        let step = self.t;
        let wrap = at_step(step);
        let critic_loss = self.critic_update(batch).map_err(&wrap)?;
        let mut report = LossReport {
            step,
            actor_loss: None,
            critic_loss,
            value_loss: None,
            bc_term: 0.0,
            penalty_term: 0.0,
            noise_scale: 0.0,
        };
        if step % self.config.policy_update_delay == 0 {
            let (loss, bc, pen, noise) = self.actor_update(batch).map_err(&wrap)?;
            report.actor_loss = Some(loss);
            report.bc_term = bc;
            report.penalty_term = pen;
            report.noise_scale = noise;
        }
        self.target_critic.polyak_from(&self.critic, self.config.tau);
        self.target_actor.net.polyak_from(&self.actor.net, self.config.tau);
        self.t += 1;
        Ok(report)
    }
}

/// IQL-style trainer: expectile value regression, TD critics toward V(s′),
/// and advantage-weighted policy extraction with a gaussian actor.
#[derive(Clone)]
pub struct IqlTrainer {
    pub config: IqlConfig,
    pub discount: f32,
    pub total_steps: u64,
    pub actor: Actor,
    pub critic: Critic,
    pub target_critic: Critic,
    pub value: ValueNet,
    actor_adam: AdamState,
    critic_adam: AdamState,
    value_adam: AdamState,
    hooks: ActorHooksState,
    t: u64,
}

impl IqlTrainer {
    pub fn new(
        config: &IqlConfig,
        reg: &RegularizerConfig,
        state_dim: usize,
        action_dim: usize,
        discount: f32,
        total_steps: u64,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        reg.validate()?;
        let mut init = Rng::stream(seed, Stream::Init);
        let hooks = ActorHooks::new(reg, seed);
        let spec = hooks.actor_spec(
            state_dim,
            action_dim,
            config.hidden_dim,
            config.num_hidden_layers,
            Head::Gaussian,
        );
        let actor = Actor::new(spec, &mut init)?;
        let critic = Critic::new(
            state_dim,
            action_dim,
            config.hidden_dim,
            config.num_hidden_layers,
            NormKind::None,
            None,
            &mut init,
        )?;
        let value = ValueNet::new(state_dim, config.hidden_dim, config.num_hidden_layers, &mut init)?;
        Ok(Self {
            actor_adam: adam_for(actor.net.params(), config.actor_lr),
            critic_adam: adam_for(critic.heads.iter().flat_map(|h| h.params()).collect(), config.critic_lr),
            value_adam: adam_for(value.net.params(), config.value_lr),
            config: config.clone(),
            discount,
            total_steps: total_steps.max(1),
            actor,
            target_critic: critic.clone(),
            critic,
            value,
            hooks: ActorHooksState::from(hooks),
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn actor_lr(&self, t: u64) -> f32 {
        match self.config.lr_schedule {
            LrSchedule::Constant => self.config.actor_lr,
            LrSchedule::Cosine => {
                let frac = (t.min(self.total_steps) as f64) / self.total_steps as f64;
                (self.config.actor_lr as f64 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())) as f32
            }
        }
    }

    fn value_update(&mut self, batch: &Batch, target_q: &Tensor) -> Result<(f32, Tensor)> {
        let mut g = Graph::new();
        let s = g.constant(batch.states.clone());
        let out = self.value.net.forward(&mut g, s, Bind::Params, None)?;
        let v_old = g.value(out.output).clone();
        let tq = g.constant(target_q.clone());
        let u = g.sub(tq, out.output)?;
        let tau = self.config.expectile;
        let w: Vec<f32> = g.value(u).data().iter().map(|&x| if x < 0.0 { 1.0 - tau } else { tau }).collect();
        let w = g.constant(Tensor::new(&[w.len(), 1], w)?);
        let sq = g.square(u)?;
        let weighted = g.mul(sq, w)?;
        let loss = g.mean(weighted)?;
        let value = g.value(loss).item();
        let mut grads = g.backward(loss)?;
        let grads = collect_grads(&mut grads, &out.params);
        self.value_adam.step(&mut self.value.net.params_mut(), &grads)?;
        Ok((value, v_old))
    }

    fn critic_update(&mut self, batch: &Batch, next_v: &Tensor) -> Result<f32> {
        let y: Vec<f32> = (0..batch.rewards.numel())
            .map(|i| {
                batch.rewards.data()[i] + self.discount * (1.0 - batch.dones.data()[i]) * next_v.data()[i]
            })
            .collect();
        let y = Tensor::new(&[y.len(), 1], y)?;
        let mut g = Graph::new();
        let s = g.constant(batch.states.clone());
        let a = g.constant(batch.actions.clone());
        let mut vars = Vec::new();
        let mut total: Option<Var> = None;
        for head in 0..2 {
            let out = self.critic.head_forward(head, &mut g, s, a, Bind::Params)?;
            vars.extend(out.params.iter().copied());
            let loss = mse_to(&mut g, out.output, &y)?;
            total = Some(match total {
                Some(t) => g.add(t, loss)?,
                None => loss,
            });
        }
        let total = total.expect("two heads");
        let value = g.value(total).item();
        let mut grads = g.backward(total)?;
        let grads = collect_grads(&mut grads, &vars);
        let lr = self.critic_adam.config.lr;
        step_critic(&mut self.critic, &mut self.critic_adam, &grads, lr)?;
        Ok(value)
    }

    /// AWR weights `min(exp(β·adv + ν_ob·ε), max_weight)`.
    fn awr_weights(&self, hooks: &mut ActorHooks, adv: &[f32]) -> Vec<f32> {
        let (beta, nu, cap) = (self.config.temperature, hooks.reg.objective_noise, self.config.max_weight);
        adv.iter()
            .map(|&a| {
                let noise = if nu > 0.0 { nu * hooks.objective_rng.normal() } else { 0.0 };
                (beta * a + noise).exp().min(cap)
            })
            .collect()
    }

    fn actor_update(&mut self, batch: &Batch, adv: &[f32]) -> Result<(f32, f32, f32, f32)> {
        let mut hooks = self.hooks.hooks();
        let weights = self.awr_weights(&mut hooks, adv);
        let states_in = hooks.noisy_states(&batch.states);
        let mut g = Graph::new();
        let s_in = g.constant(states_in);
        let mut ctx = TrainCtx::new(&mut hooks.dropout_rng);
        let out = self.actor.forward(&mut g, s_in, Bind::Params, Some(&mut ctx))?;
        let updates = std::mem::take(&mut ctx.updates);
        let log_std = out.log_std.expect("gaussian head");
        let logp = gaussian_log_prob(&mut g, out.output, log_std, &batch.actions)?;
        let b = batch.states.rows();
        let w = g.constant(Tensor::new(&[b, 1], weights)?);
        let weighted = g.mul(w, logp)?;
        let wsum = g.mean(weighted)?;
        let mut loss = g.neg(wsum)?;
        let bc_value = -g.value(logp).sum() / b as f32;
        let mut penalty = 0.0;
        if let Some(p) = hooks.penalty(&mut g, &self.actor, &out.params)? {
            penalty = g.value(p).item();
            loss = g.add(loss, p)?;
        }
        let loss_value = g.value(loss).item();
        let mut grads = g.backward(loss)?;
        let mut grads = collect_grads(&mut grads, &out.params);
        let noise = hooks.perturb_gradients(&mut grads, self.t);
        let lr = self.actor_lr(self.t);
        self.actor_adam.step_with_lr(&mut self.actor.net.params_mut(), &grads, lr)?;
        self.actor.net.apply_updates(updates);
        self.hooks = ActorHooksState::from(hooks);
        Ok((loss_value, bc_value, penalty, noise))
    }

    pub fn step(&mut self, batch: &Batch) -> Result<LossReport> {
        let step = self.t;
        let wrap = at_step(step);
        let inner = |this: &mut Self| -> Result<LossReport> {
            let next_v = this.value.predict(&batch.next_states)?;
            let (q1, q2) = this.target_critic.q_values(&batch.states, &batch.actions)?;
            let target_q = twin_min(&q1, &q2);
            let (value_loss, v_old) = this.value_update(batch, &target_q)?;
            let critic_loss = this.critic_update(batch, &next_v)?;
            let adv: Vec<f32> = target_q.data().iter().zip(v_old.data()).map(|(q, v)| q - v).collect();
            let (actor_loss, bc, pen, noise) = this.actor_update(batch, &adv)?;
            Ok(LossReport {
                step,
                actor_loss: Some(actor_loss),
                critic_loss,
                value_loss: Some(value_loss),
                bc_term: bc,
                penalty_term: pen,
                noise_scale: noise,
            })
        };
        let report = inner(self).map_err(&wrap)?;
        self.target_critic.polyak_from(&self.critic, self.config.tau);
        self.t += 1;
        Ok(report)
    }
}

/// Per-row `log N(a | μ, σ²)` summed over action dims, `[b, 1]`.
pub fn gaussian_log_prob(g: &mut Graph, mean: Var, log_std: Var, actions: &Tensor) -> Result<Var> {
    let a = g.constant(actions.clone());
    let diff = g.sub(a, mean)?;
    let neg_ls = g.neg(log_std)?;
    let inv_std = g.exp(neg_ls)?;
    let z = g.mul(diff, inv_std)?;
    let z2 = g.square(z)?;
    let half = g.scale(z2, -0.5)?;
    let per_dim = g.sub(half, log_std)?;
    let per_dim = g.affine(per_dim, 1.0, -0.5 * (2.0 * std::f32::consts::PI).ln())?;
    Ok(g.row_sum(per_dim)?)
}

/// Either trainer behind one interface.
#[derive(Clone)]
pub enum Trainer {
    Rebrac(Box<RebracTrainer>),
    Iql(Box<IqlTrainer>),
}

impl Trainer {
    /// Builds the trainer for `config`; the discount defaults to the task's
    /// and the categorical support to the dataset's value range.
    pub fn new(
        config: &AlgorithmConfig,
        reg: &RegularizerConfig,
        dataset: &TransitionDataset,
        default_discount: f32,
        total_steps: u64,
        seed: u64,
    ) -> Result<Self> {
        let (n, m) = (dataset.state_dim, dataset.action_dim);
        match config {
            AlgorithmConfig::Rebrac(c) => {
                let discount = c.discount.unwrap_or(default_discount);
                let range = match c.critic_loss {
                    CriticLossKind::Categorical => Some(estimate_value_range(dataset, discount)),
                    CriticLossKind::Mse => None,
                };
                Ok(Trainer::Rebrac(Box::new(RebracTrainer::new(
                    c, reg, n, m, discount, range, seed,
                )?)))
            }
            AlgorithmConfig::Iql(c) => {
                let discount = c.discount.unwrap_or(default_discount);
                Ok(Trainer::Iql(Box::new(IqlTrainer::new(
                    c,
                    reg,
                    n,
                    m,
                    discount,
                    total_steps,
                    seed,
                )?)))
            }
        }
    }

    pub fn step(&mut self, batch: &Batch) -> Result<LossReport> {
        match self {
            Trainer::Rebrac(t) => t.step(batch),
            Trainer::Iql(t) => t.step(batch),
        }
    }

    pub fn actor(&self) -> &Actor {
        match self {
            Trainer::Rebrac(t) => &t.actor,
            Trainer::Iql(t) => &t.actor,
        }
    }

    pub fn steps(&self) -> u64 {
        match self {
            Trainer::Rebrac(t) => t.steps(),
            Trainer::Iql(t) => t.steps(),
        }
    }

    /// Learning rate the actor optimizer uses (initial value for schedules).
    pub fn actor_lr(&self) -> f32 {
        match self {
            Trainer::Rebrac(t) => t.config.actor_lr,
            Trainer::Iql(t) => t.config.actor_lr,
        }
    }
}

/// Receives checkpoints and loss reports from [`train_run`].
pub trait RunHook {
    fn checkpoint(&mut self, step: u64, trainer: &Trainer) -> Result<()>;

    fn losses(&mut self, _report: &LossReport) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub algorithm: AlgorithmConfig,
    pub regularizer: RegularizerConfig,
    pub steps: u64,
    pub eval_interval: u64,
    /// Loss reports are forwarded every `log_interval` steps.
    pub log_interval: u64,
    pub seed: u64,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        self.algorithm.validate()?;
        self.regularizer.validate()?;
        if self.steps == 0 {
            return Err(Error::Config("steps: must be >= 1".into()));
        }
        if self.eval_interval == 0 || self.eval_interval > self.steps {
            return Err(Error::Config(format!(
                "eval_interval: must lie in [1, steps={}], got {}",
                self.steps, self.eval_interval
            )));
        }
        if self.log_interval == 0 {
            return Err(Error::Config("log_interval: must be >= 1".into()));
        }
        Ok(())
    }
}

/// Trains for `spec.steps` steps on minibatches drawn uniformly with
/// replacement from `split.train`, calling the hook every `eval_interval`
/// steps. Returns the trained trainer.
pub fn train_run<H: RunHook>(
    spec: &RunSpec,
    dataset: &TransitionDataset,
    split: &SplitDataset,
    default_discount: f32,
    hook: &mut H,
) -> Result<Trainer> {
    spec.validate()?;
    if split.train.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    let mut trainer = Trainer::new(
        &spec.algorithm,
        &spec.regularizer,
        dataset,
        default_discount,
        spec.steps,
        spec.seed,
    )?;
    let mut rng = Rng::stream(spec.seed, Stream::Batches);
    let b = spec.algorithm.batch_size();
    let mut idx = vec![0usize; b];
    for step in 1..=spec.steps {
        for slot in idx.iter_mut() {
            *slot = split.train[rng.below(split.train.len())];
        }
        let batch = dataset.batch(&idx);
        let report = trainer.step(&batch)?;
        if step % spec.log_interval == 0 {
            hook.losses(&report)?;
        }
        if step % spec.eval_interval == 0 {
            hook.checkpoint(step, &trainer)?;
        }
    }
    Ok(trainer)
}
