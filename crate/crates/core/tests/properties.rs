use actoreg_core::data::{generate_dataset, split, Environment, Tier, TransitionDataset};
use actoreg_core::diagnostics::srank;
use actoreg_core::networks::{Head, Mlp, MlpSpec};
use actoreg_core::regularizers::NormKind;
use actoreg_core::rng::Rng;
use actoreg_core::stats::{performance_profile, ScoreMatrix};
use actoreg_core::tensor::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_an_exact_partition(len in 20usize..5000, seed in any::<u64>()) {
        let s = split(len, 0.05, seed).unwrap();
        prop_assert_eq!(s.validation.len(), len * 5 / 100);
        prop_assert_eq!(s.train.len() + s.validation.len(), len);
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), len);
    }

    #[test]
    fn profile_is_non_increasing(scores in prop::collection::vec(-50.0f64..200.0, 6), steps in 2usize..40) {
        let m = ScoreMatrix::new("a", vec!["x".into(), "y".into()], scores.chunks(2).map(|c| c.to_vec()).collect()).unwrap();
        let taus: Vec<f64> = (0..steps).map(|i| -1.0 + 3.0 * i as f64 / steps as f64).collect();
        let p = performance_profile(&m, &taus).unwrap();
        prop_assert!(p.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn srank_is_bounded_by_shape(rows in 1usize..24, cols in 1usize..24, seed in any::<u64>()) {
        let t = Rng::new(seed, 0).normal_tensor(&[rows, cols]);
        let k = srank(&t, 0.99);
        prop_assert!(k >= 1 && k <= rows.min(cols));
    }

    #[test]
    fn checkpoint_round_trip(layers in 1usize..4, hidden in 1usize..5, norm in 0u8..5, seed in any::<u64>()) {
        let norm = NormKind::from_code(norm).unwrap();
        let hidden = if norm == NormKind::Group { 8 * hidden } else { hidden * 3 };
        let spec = MlpSpec::new(3, 2, hidden, layers).with_head(Head::Gaussian).with_norm(norm).with_dropout(0.25);
        let net = Mlp::build(spec, &mut Rng::new(seed, 1)).unwrap();
        let mut bytes = Vec::new();
        net.write_checkpoint(&mut bytes).unwrap();
        let back = Mlp::read_checkpoint(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.params(), net.params());
        let x = Tensor::new(&[2, 3], vec![0.1, 0.2, -0.3, 1.0, -1.0, 0.5]).unwrap();
        prop_assert_eq!(back.predict(&x).unwrap(), net.predict(&x).unwrap());
    }
}

fn replay_matches(env: &Environment, ds: &TransitionDataset) -> bool {
    (0..ds.len()).all(|i| {
        let st = env.step(ds.state(i), ds.action(i));
        st.reward == ds.rewards[i] && st.next_state.as_slice() == ds.next_state(i)
    })
}

#[test]
fn datasets_replay_and_round_trip() {
    for name in ["point-dense", "point-sparse", "point-highdim"] {
        let env = Environment::by_name(name).unwrap();
        for tier in [Tier::Random, Tier::Medium, Tier::Expert, Tier::Mixed] {
            let ds = generate_dataset(&env, tier, 500, 9).unwrap();
            assert!(replay_matches(&env, &ds), "{name} {tier:?}");
            assert!(ds.actions.iter().all(|a| (-1.0..=1.0).contains(a)));
            let back = TransitionDataset::from_bytes(&ds.to_bytes(), ds.meta.clone()).unwrap();
            assert_eq!(back, ds);
        }
    }
}
