use actoreg_core::algorithms::{
    expectile_loss, gaussian_log_prob, train_run, two_hot, categorical_critic_loss, AlgorithmConfig, CriticLossKind,
    IqlConfig, IqlTrainer, LossReport, RebracConfig, RebracTrainer, RunHook, RunSpec, Trainer,
};
use actoreg_core::data::{generate_dataset, split, Batch, Environment, Tier, TransitionDataset};
use actoreg_core::graph::Graph;
use actoreg_core::networks::{Bind, CategoricalSupport};
use actoreg_core::regularizers::{gradient_noise_scale, NormKind, RegularizerConfig};
use actoreg_core::rng::Rng;
use actoreg_core::tensor::Tensor;
use actoreg_core::Error;

fn small_rebrac() -> RebracConfig {
    RebracConfig {
        batch_size: 32,
        hidden_dim: 16,
        num_hidden_layers: 2,
        critic_loss: CriticLossKind::Mse,
        ..Default::default()
    }
}

fn small_iql() -> IqlConfig {
    IqlConfig {
        batch_size: 32,
        hidden_dim: 16,
        num_hidden_layers: 2,
        ..Default::default()
    }
}

fn toy() -> (Environment, TransitionDataset) {
    let env = Environment::by_name("point-dense").unwrap();
    let ds = generate_dataset(&env, Tier::Expert, 2000, 3).unwrap();
    (env, ds)
}

fn batch(ds: &TransitionDataset, rng: &mut Rng, b: usize) -> Batch {
    let idx: Vec<usize> = (0..b).map(|_| rng.below(ds.len())).collect();
    ds.batch(&idx)
}

fn bits(t: &Tensor) -> Vec<u32> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

#[test]
fn twin_min_target_never_exceeds_either_critic() {
    let (_, ds) = toy();
    let cfg = RebracConfig { policy_noise: 0.0, critic_bc_coef: 0.3, ..small_rebrac() };
    let mut t = RebracTrainer::new(&cfg, &RegularizerConfig::default(), 4, 2, 0.99, None, 1).unwrap();
    let mut rng = Rng::new(1, 99);
    for _ in 0..20 {
        let b = batch(&ds, &mut rng, 32);
        let y = t.clone().td_target(&b).unwrap();
        let next = t.target_actor.act(&b.next_states).unwrap();
        let (q1, q2) = t.target_critic.q_values(&b.next_states, &next).unwrap();
        for i in 0..32 {
            let cont = 0.99 * (1.0 - b.dones.data()[i]);
            let r = b.rewards.data()[i];
            assert!(y.data()[i] <= r + cont * q1.data()[i] + 1e-5);
            assert!(y.data()[i] <= r + cont * q2.data()[i] + 1e-5);
        }
        t.step(&b).unwrap();
    }
}

#[test]
fn targets_follow_polyak_trace() {
    let (_, ds) = toy();
    let mut t = RebracTrainer::new(&small_rebrac(), &RegularizerConfig::default(), 4, 2, 0.99, None, 2).unwrap();
    let mut rng = Rng::new(2, 99);
    let tau = t.config.tau;
    for _ in 0..5 {
        let before: Vec<Tensor> = t.target_critic.heads[0].params().into_iter().cloned().collect();
        let actor_before: Vec<Tensor> = t.target_actor.net.params().into_iter().cloned().collect();
        t.step(&batch(&ds, &mut rng, 32)).unwrap();
        for (old, (new, online)) in before
            .iter()
            .zip(t.target_critic.heads[0].params().into_iter().zip(t.critic.heads[0].params()))
        {
            for ((o, n), w) in old.data().iter().zip(new.data()).zip(online.data()) {
                assert_eq!(*n, tau * w + (1.0 - tau) * o);
            }
        }
        for (old, (new, online)) in actor_before
            .iter()
            .zip(t.target_actor.net.params().into_iter().zip(t.actor.net.params()))
        {
            for ((o, n), w) in old.data().iter().zip(new.data()).zip(online.data()) {
                assert_eq!(*n, tau * w + (1.0 - tau) * o);
            }
        }
    }
}

#[test]
fn polyak_gap_shrinks_geometrically_when_online_is_frozen() {
    let t = RebracTrainer::new(&small_rebrac(), &RegularizerConfig::default(), 4, 2, 0.99, None, 3).unwrap();
    let online = t.actor.net.clone();
    let mut target = t.actor.net.clone();
    for p in target.params_mut() {
        for x in p.data_mut() {
            *x += 1.0;
        }
    }
    let gap = |a: &actoreg_core::networks::Mlp| -> f64 {
        a.params()
            .iter()
            .zip(online.params())
            .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| ((p - q) as f64).powi(2)))
            .sum::<f64>()
            .sqrt()
    };
    let tau = 5e-3f32;
    let mut prev = gap(&target);
    for _ in 0..200 {
        target.polyak_from(&online, tau);
        let now = gap(&target);
        assert!(((now / prev) - (1.0 - tau as f64)).abs() < 1e-4, "{}", now / prev);
        prev = now;
    }
}

#[test]
fn expectile_minimizer_over_constants() {
    let mut rng = Rng::new(4, 4);
    for tau in [0.5f32, 0.7, 0.9] {
        let y: Vec<f32> = (0..10).map(|_| rng.normal() * 2.0).collect();
        // expectile via bisection on Σ|τ − 1{y<c}|(y − c) = 0
        let (mut lo, mut hi) = (-10.0f64, 10.0f64);
        for _ in 0..200 {
            let c = 0.5 * (lo + hi);
            let g: f64 = y
                .iter()
                .map(|&v| {
                    let u = v as f64 - c;
                    let w = if u < 0.0 { 1.0 - tau as f64 } else { tau as f64 };
                    w * u
                })
                .sum();
            if g > 0.0 {
                lo = c;
            } else {
                hi = c;
            }
        }
        let expectile = 0.5 * (lo + hi);
        let loss_at = |c: f32| expectile_loss(&y.iter().map(|v| v - c).collect::<Vec<_>>(), tau);
        let mut best = (f32::INFINITY, 0.0f32);
        let mut c = -6.0f32;
        while c <= 6.0 {
            let l = loss_at(c);
            if l < best.0 {
                best = (l, c);
            }
            c += 1e-3;
        }
        assert!((best.1 as f64 - expectile).abs() < 2e-3, "tau {tau}: {} vs {expectile}", best.1);
        for _ in 0..50 {
            let (a, b) = (rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0));
            assert!(loss_at(0.5 * (a + b)) <= 0.5 * (loss_at(a) + loss_at(b)) + 1e-5);
        }
    }
}

#[test]
fn categorical_loss_properties() {
    let sup = CategoricalSupport { bins: 11, v_min: -5.0, v_max: 5.0 };
    assert_eq!(two_hot(-2.5, &sup)[2], 0.5);
    assert_eq!(two_hot(-2.5, &sup)[3], 0.5);
    let target = two_hot(1.3, &sup);
    let loss_for = |logits: Vec<f32>| {
        let mut g = Graph::new();
        let l = g.param(Tensor::new(&[1, 11], logits).unwrap());
        let loss = categorical_critic_loss(&mut g, l, &[1.3], &sup).unwrap();
        g.value(loss).item()
    };
    let matched: Vec<f32> = target.iter().map(|p| (p + 1e-12f32).ln()).collect();
    let best = loss_for(matched);
    let mut rng = Rng::new(5, 5);
    for _ in 0..50 {
        let other: Vec<f32> = (0..11).map(|_| rng.normal() * 3.0).collect();
        assert!(loss_for(other) >= best - 1e-5);
    }
}

#[test]
fn categorical_q_readout_is_expectation() {
    let mut rng = Rng::new(6, 6);
    let sup = CategoricalSupport { bins: 5, v_min: 0.0, v_max: 4.0 };
    let critic = actoreg_core::networks::Critic::new(2, 1, 8, 1, NormKind::None, Some(sup), &mut rng).unwrap();
    let s = rng.normal_tensor(&[3, 2]);
    let a = rng.uniform_tensor(&[3, 1], -1.0, 1.0);
    let mut g = Graph::new();
    let (sv, av) = (g.constant(s.clone()), g.constant(a.clone()));
    let raw = critic.head_forward(0, &mut g, sv, av, Bind::Constants).unwrap();
    let logits = g.value(raw.output).clone();
    let q = critic.q_values(&s, &a).unwrap().0;
    for i in 0..3 {
        let row = logits.row(i);
        let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let z: f32 = row.iter().map(|l| (l - mx).exp()).sum();
        let e: f32 = row.iter().enumerate().map(|(k, l)| (l - mx).exp() / z * k as f32).sum();
        assert!((q.data()[i] - e).abs() < 1e-5);
    }
}

#[test]
fn large_bc_coefficient_collapses_to_behavior_cloning() {
    let (_, ds) = toy();
    let cfg = RebracConfig { actor_bc_coef: 100.0, hidden_dim: 32, batch_size: 64, ..small_rebrac() };
    let mut t = RebracTrainer::new(&cfg, &RegularizerConfig::default(), 4, 2, 0.99, None, 7).unwrap();
    let mut rng = Rng::new(7, 99);
    for _ in 0..5000 {
        t.step(&batch(&ds, &mut rng, 64)).unwrap();
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let b = ds.batch(&all);
    let pred = t.actor.act(&b.states).unwrap();
    let err: f64 = pred
        .data()
        .iter()
        .zip(b.actions.data())
        .map(|(p, a)| ((p - a) as f64).powi(2))
        .sum::<f64>()
        / ds.len() as f64;
    assert!(err < 0.05, "mean squared action error {err}");
}

#[test]
fn inactive_regularizers_report_zero_penalty() {
    let (_, ds) = toy();
    let mut rng = Rng::new(8, 8);
    let mut r = RebracTrainer::new(&small_rebrac(), &RegularizerConfig::default(), 4, 2, 0.99, None, 8).unwrap();
    let mut i = IqlTrainer::new(&small_iql(), &RegularizerConfig::default(), 4, 2, 0.99, 100, 8).unwrap();
    for _ in 0..4 {
        let b = batch(&ds, &mut rng, 32);
        for rep in [r.step(&b).unwrap(), i.step(&b).unwrap()] {
            assert_eq!(rep.penalty_term, 0.0);
            assert_eq!(rep.noise_scale, 0.0);
        }
    }
}

#[test]
fn active_hooks_show_up_in_reports() {
    let (_, ds) = toy();
    let reg = RegularizerConfig {
        weight_decay: 1e-3,
        gradient_noise: 0.1,
        ..Default::default()
    };
    let mut t = RebracTrainer::new(&small_rebrac(), &reg, 4, 2, 0.99, None, 9).unwrap();
    let mut rng = Rng::new(9, 9);
    for step in 0..4u64 {
        let rep = t.step(&batch(&ds, &mut rng, 32)).unwrap();
        assert_eq!(rep.step, step);
        if step % 2 == 0 {
            assert!(rep.penalty_term > 0.0);
            assert_eq!(rep.noise_scale, gradient_noise_scale(0.1, step, 0.55));
            assert!(rep.actor_loss.is_some());
        } else {
            assert!(rep.actor_loss.is_none());
        }
    }
}

#[test]
fn zero_temperature_iql_actor_loss_is_nll() {
    let (_, ds) = toy();
    let cfg = IqlConfig { temperature: 0.0, ..small_iql() };
    let mut t = IqlTrainer::new(&cfg, &RegularizerConfig::default(), 4, 2, 0.99, 100, 10).unwrap();
    let mut rng = Rng::new(10, 10);
    for _ in 0..5 {
        let rep = t.step(&batch(&ds, &mut rng, 32)).unwrap();
        let (loss, nll) = (rep.actor_loss.unwrap(), rep.bc_term);
        assert!((loss - nll).abs() <= 1e-5 * nll.abs().max(1.0), "{loss} vs {nll}");
    }
}

/// Per-step losses recomputed from the pre-step state with expressions that
/// contain no regularizer terms.
fn rebrac_reference(before: &RebracTrainer, after: &RebracTrainer, b: &Batch) -> (f32, f32) {
    let y = before.clone().td_target(b).unwrap();
    let mut g = Graph::new();
    let (s, a) = (g.constant(b.states.clone()), g.constant(b.actions.clone()));
    let mut total = None;
    for head in 0..2 {
        let out = before.critic.head_forward(head, &mut g, s, a, Bind::Params).unwrap();
        let t = g.constant(y.clone());
        let d = g.sub(out.output, t).unwrap();
        let sq = g.square(d).unwrap();
        let l = g.mean(sq).unwrap();
        total = Some(match total {
            Some(x) => g.add(x, l).unwrap(),
            None => l,
        });
    }
    let critic = g.value(total.unwrap()).item();

    let mut g = Graph::new();
    let s = g.constant(b.states.clone());
    let out = before.actor.forward(&mut g, s, Bind::Params, None).unwrap();
    let s2 = g.constant(b.states.clone());
    let q = after.critic.q(0, &mut g, s2, out.output, Bind::Constants).unwrap();
    let n = b.states.rows() as f32;
    let target = g.constant(b.actions.clone());
    let diff = g.sub(out.output, target).unwrap();
    let sq = g.square(diff).unwrap();
    let bc_sum = g.sum(sq).unwrap();
    let bc = g.scale(bc_sum, 1.0 / n).unwrap();
    let q_mean = g.mean(q).unwrap();
    let lambda = 1.0 / (g.value(q).data().iter().map(|v| v.abs()).sum::<f32>() / n).max(1e-6);
    let bc_scaled = g.scale(bc, before.config.actor_bc_coef).unwrap();
    let q_scaled = g.scale(q_mean, lambda).unwrap();
    let loss = g.sub(bc_scaled, q_scaled).unwrap();
    (critic, g.value(loss).item())
}

fn iql_reference(before: &IqlTrainer, b: &Batch) -> (f32, f32, f32) {
    let (q1, q2) = before.target_critic.q_values(&b.states, &b.actions).unwrap();
    let tq: Vec<f32> = q1.data().iter().zip(q2.data()).map(|(x, y)| x.min(*y)).collect();
    let tq = Tensor::new(&[tq.len(), 1], tq).unwrap();
    let next_v = before.value.predict(&b.next_states).unwrap();
    let v_old = before.value.predict(&b.states).unwrap();

    let mut g = Graph::new();
    let s = g.constant(b.states.clone());
    let out = before.value.net.forward(&mut g, s, Bind::Params, None).unwrap();
    let t = g.constant(tq.clone());
    let u = g.sub(t, out.output).unwrap();
    let tau = before.config.expectile;
    let w: Vec<f32> = g.value(u).data().iter().map(|&x| if x < 0.0 { 1.0 - tau } else { tau }).collect();
    let w = g.constant(Tensor::new(&[w.len(), 1], w).unwrap());
    let sq = g.square(u).unwrap();
    let weighted = g.mul(sq, w).unwrap();
    let vl = g.mean(weighted).unwrap();
    let value_loss = g.value(vl).item();

    let y: Vec<f32> = (0..b.rewards.numel())
        .map(|i| b.rewards.data()[i] + before.discount * (1.0 - b.dones.data()[i]) * next_v.data()[i])
        .collect();
    let y = Tensor::new(&[y.len(), 1], y).unwrap();
    let mut g = Graph::new();
    let (s, a) = (g.constant(b.states.clone()), g.constant(b.actions.clone()));
    let mut total = None;
    for head in 0..2 {
        let out = before.critic.head_forward(head, &mut g, s, a, Bind::Params).unwrap();
        let t = g.constant(y.clone());
        let d = g.sub(out.output, t).unwrap();
        let sq = g.square(d).unwrap();
        let l = g.mean(sq).unwrap();
        total = Some(match total {
            Some(x) => g.add(x, l).unwrap(),
            None => l,
        });
    }
    let critic_loss = g.value(total.unwrap()).item();

    let weights: Vec<f32> = tq
        .data()
        .iter()
        .zip(v_old.data())
        .map(|(q, v)| (before.config.temperature * (q - v)).exp().min(before.config.max_weight))
        .collect();
    let mut g = Graph::new();
    let s = g.constant(b.states.clone());
    let out = before.actor.forward(&mut g, s, Bind::Params, None).unwrap();
    let logp = gaussian_log_prob(&mut g, out.output, out.log_std.unwrap(), &b.actions).unwrap();
    let w = g.constant(Tensor::new(&[weights.len(), 1], weights).unwrap());
    let weighted = g.mul(w, logp).unwrap();
    let m = g.mean(weighted).unwrap();
    let loss = g.neg(m).unwrap();
    (value_loss, critic_loss, g.value(loss).item())
}

#[test]
fn regularizer_off_losses_are_bit_identical_to_plain_expressions() {
    let (_, ds) = toy();
    let mut rng = Rng::new(11, 11);
    let mut r = RebracTrainer::new(&small_rebrac(), &RegularizerConfig::default(), 4, 2, 0.99, None, 11).unwrap();
    let mut q = IqlTrainer::new(&small_iql(), &RegularizerConfig::default(), 4, 2, 0.99, 100, 11).unwrap();
    for step in 0..6 {
        let b = batch(&ds, &mut rng, 32);
        let before = r.clone();
        let rep = r.step(&b).unwrap();
        let (critic, actor) = rebrac_reference(&before, &r, &b);
        assert_eq!(rep.critic_loss.to_bits(), critic.to_bits(), "rebrac critic step {step}");
        if let Some(al) = rep.actor_loss {
            assert_eq!(al.to_bits(), actor.to_bits(), "rebrac actor step {step}");
        }

        let before = q.clone();
        let rep = q.step(&b).unwrap();
        let (v, c, a) = iql_reference(&before, &b);
        assert_eq!(rep.value_loss.unwrap().to_bits(), v.to_bits(), "iql value step {step}");
        assert_eq!(rep.critic_loss.to_bits(), c.to_bits(), "iql critic step {step}");
        assert_eq!(rep.actor_loss.unwrap().to_bits(), a.to_bits(), "iql actor step {step}");
    }
}

#[test]
fn non_finite_batch_aborts_with_step_index() {
    let (_, ds) = toy();
    let mut rng = Rng::new(12, 12);
    let mut t = RebracTrainer::new(&small_rebrac(), &RegularizerConfig::default(), 4, 2, 0.99, None, 12).unwrap();
    for _ in 0..3 {
        t.step(&batch(&ds, &mut rng, 32)).unwrap();
    }
    let mut b = batch(&ds, &mut rng, 32);
    b.rewards.data_mut()[0] = f32::NAN;
    match t.step(&b) {
        Err(Error::Numeric { step, .. }) => assert_eq!(step, 3),
        other => panic!("expected numeric error, got {:?}", other.map(|_| ())),
    }
    let mut i = IqlTrainer::new(&small_iql(), &RegularizerConfig::default(), 4, 2, 0.99, 100, 12).unwrap();
    match i.step(&b) {
        Err(Error::Numeric { step, .. }) => assert_eq!(step, 0),
        other => panic!("expected numeric error, got {:?}", other.map(|_| ())),
    }
}

#[derive(Default)]
struct Recorder {
    checkpoints: Vec<(u64, Vec<u32>)>,
    losses: Vec<LossReport>,
}

impl RunHook for Recorder {
    fn checkpoint(&mut self, step: u64, trainer: &Trainer) -> actoreg_core::Result<()> {
        let s = Tensor::new(&[1, 4], vec![0.1, -0.2, 0.0, 0.3]).unwrap();
        self.checkpoints.push((step, bits(&trainer.actor().act(&s)?)));
        Ok(())
    }

    fn losses(&mut self, report: &LossReport) -> actoreg_core::Result<()> {
        self.losses.push(report.clone());
        Ok(())
    }
}

#[test]
fn train_run_is_deterministic_and_calls_hook_on_schedule() {
    let (env, ds) = toy();
    let sp = split(ds.len(), 0.05, 0).unwrap();
    let reg = RegularizerConfig {
        dropout: 0.1,
        norm: NormKind::Layer,
        input_noise: 0.01,
        objective_noise: 0.01,
        gradient_noise: 0.01,
        weight_decay: 1e-4,
        ..Default::default()
    };
    for algorithm in [AlgorithmConfig::Rebrac(small_rebrac()), AlgorithmConfig::Iql(small_iql())] {
        let spec = RunSpec {
            algorithm,
            regularizer: reg.clone(),
            steps: 60,
            eval_interval: 20,
            log_interval: 10,
            seed: 5,
        };
        let mut a = Recorder::default();
        let mut b = Recorder::default();
        train_run(&spec, &ds, &sp, env.default_discount(), &mut a).unwrap();
        train_run(&spec, &ds, &sp, env.default_discount(), &mut b).unwrap();
        assert_eq!(a.checkpoints, b.checkpoints);
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>(), vec![20, 40, 60]);
        assert_eq!(a.losses.len(), 6);

        let once = RunSpec { eval_interval: 60, ..spec.clone() };
        let mut c = Recorder::default();
        train_run(&once, &ds, &sp, env.default_discount(), &mut c).unwrap();
        assert_eq!(c.checkpoints.len(), 1);
        assert_eq!(c.checkpoints[0].0, 60);

        let other_seed = RunSpec { seed: 6, ..spec };
        let mut d = Recorder::default();
        train_run(&other_seed, &ds, &sp, env.default_discount(), &mut d).unwrap();
        assert_ne!(a.checkpoints, d.checkpoints);
    }
}

#[test]
fn domain_discounts() {
    assert_eq!(Environment::by_name("point-sparse").unwrap().default_discount(), 0.999);
    assert_eq!(Environment::by_name("point-dense").unwrap().default_discount(), 0.99);
    assert_eq!(Environment::by_name("point-highdim").unwrap().default_discount(), 0.99);
}

#[test]
fn categorical_rebrac_trains() {
    let (env, ds) = toy();
    let sp = split(ds.len(), 0.05, 0).unwrap();
    let cfg = RebracConfig { critic_loss: CriticLossKind::Categorical, ..small_rebrac() };
    let spec = RunSpec {
        algorithm: AlgorithmConfig::Rebrac(cfg),
        regularizer: RegularizerConfig::default(),
        steps: 30,
        eval_interval: 30,
        log_interval: 1,
        seed: 1,
    };
    let mut r = Recorder::default();
    let t = train_run(&spec, &ds, &sp, env.default_discount(), &mut r).unwrap();
    assert_eq!(t.steps(), 30);
    assert!(r.losses.iter().all(|l| l.critic_loss.is_finite() && l.critic_loss > 0.0));
}
