use std::collections::BTreeMap;

use causalplan::kitchen::{Command, KitchenLayout, KitchenState, MacroAction, DELIVERY_REWARD};
use causalplan::matrix::{prune_action_cycles, CausalActionMatrix};
use causalplan::planner::{
    canonicalize, merge_redundant, normalize, reweight, sample_action, PlannerConfig, Planner, Proposal, ProposalSet,
};
use causalplan::policy::{Policy, PolicySpec};
use causalplan::sca::ScaModel;
use causalplan::schema::{ActionVector, FeatureSchema, StateVector};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn action() -> impl Strategy<Value = MacroAction> {
    (0..MacroAction::COUNT).prop_map(|i| MacroAction::from_index(i).unwrap())
}

fn cr_entries() -> impl Strategy<Value = Array2<f64>> {
    let schema = FeatureSchema::cramped_room();
    let (a, p, s) = (schema.action_dim(), schema.parent_dim(), schema.state_dim());
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..=1.0f64, Just(0.5)], a * p).prop_map(move |v| {
        let mut m = Array2::from_shape_vec((a, p), v).unwrap();
        for i in 0..a {
            m[[i, s + i]] = 0.0;
        }
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pruning_removes_cycles_and_is_idempotent(mut entries in cr_entries()) {
        let s = FeatureSchema::cramped_room().state_dim();
        let before = entries.clone();
        prune_action_cycles(&mut entries, s);
        let once = entries.clone();
        prune_action_cycles(&mut entries, s);
        prop_assert_eq!(&once, &entries);
        for i in 0..7 {
            for j in 0..7 {
                prop_assert!(!(once[[i, s + j]] > 0.0 && once[[j, s + i]] > 0.0));
            }
        }
        // Only entries are zeroed, and state columns never change.
        for ((r, c), v) in once.indexed_iter() {
            prop_assert!(*v == before[[r, c]] || *v == 0.0);
            if c < s {
                prop_assert_eq!(*v, before[[r, c]]);
            }
        }
    }

    #[test]
    fn csv_round_trip_is_exact(entries in cr_entries()) {
        let schema = FeatureSchema::cramped_room();
        let m = CausalActionMatrix::from_entries(entries, &schema, "prop").unwrap();
        let back = CausalActionMatrix::from_csv(&m.to_csv(), &schema, "prop").unwrap();
        prop_assert_eq!(back.entries(), m.entries());
    }

    #[test]
    fn scores_match_query_score(entries in cr_entries(), bits in prop::collection::vec(0u8..=1, 14), prev in prop::option::of(action())) {
        let schema = FeatureSchema::cramped_room();
        let m = CausalActionMatrix::from_entries(entries, &schema, "prop").unwrap();
        let state = StateVector::new(bits);
        let prev = prev.map_or_else(|| schema.no_previous_action(), |a| schema.encode_action(a));
        let scores = m.scores(&state, &prev).unwrap();
        for a in MacroAction::ALL {
            prop_assert_eq!(scores[a.index()], m.query_score(&state, &prev, a).unwrap());
        }
    }

    #[test]
    fn reweight_interpolates(p_a in 0.0..=1.0f64, p_c in 0.0..5.0f64, gamma in 0.0..=1.0f64) {
        let v = reweight(p_a, p_c, gamma).unwrap();
        prop_assert!(v >= p_a.min(p_c) - 1e-12 && v <= p_a.max(p_c) + 1e-12);
        prop_assert_eq!(reweight(p_a, p_c, 1.0).unwrap(), p_a);
        prop_assert_eq!(reweight(p_a, p_c, 0.0).unwrap(), p_c);
    }

    #[test]
    fn softmax_is_a_shift_invariant_distribution(v in prop::collection::vec(-5.0..5.0f64, 1..10), c in -50.0..50.0f64) {
        let p = normalize(&v).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        for (a, b) in p.iter().zip(normalize(&shifted).unwrap()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_matches_group_by(items in prop::collection::vec((action(), 0.0..1.0f64), 1..12)) {
        let merged = merge_redundant(&items);
        let mut expected: BTreeMap<MacroAction, f64> = BTreeMap::new();
        let mut order = Vec::new();
        for (a, p) in &items {
            if !expected.contains_key(a) {
                order.push(*a);
            }
            *expected.entry(*a).or_default() += p;
        }
        prop_assert_eq!(merged.iter().map(|(a, _)| *a).collect::<Vec<_>>(), order);
        for (a, p) in &merged {
            prop_assert!((p - expected[a]).abs() < 1e-12);
        }
        let total: f64 = items.iter().map(|(_, p)| p).sum();
        prop_assert!((merged.iter().map(|(_, p)| p).sum::<f64>() - total).abs() < 1e-12);
    }

    #[test]
    fn sampling_never_picks_zero_mass(weights in prop::collection::vec(prop_oneof![Just(0.0), 0.01..1.0f64], 1..8), seed in any::<u64>()) {
        prop_assume!(weights.iter().any(|w| *w > 0.0));
        let z: f64 = weights.iter().sum();
        let dist: Vec<f64> = weights.iter().map(|w| w / z).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let k = sample_action(&dist, &mut rng).unwrap();
            prop_assert!(dist[k] > 0.0);
        }
    }

    #[test]
    fn canonical_names_survive_decoration(a in action(), upper in any::<bool>(), suffix in prop_oneof![Just(""), Just("()"), Just("()."), Just("."), Just(" ")]) {
        let mut text = a.name().to_string();
        if upper {
            text = text.to_uppercase();
        }
        text.push_str(suffix);
        prop_assert_eq!(canonicalize(&text), Some(a));
        prop_assert_eq!(canonicalize(&text.replace('_', " ")), Some(a));
    }

    #[test]
    fn planner_chooses_a_recognized_candidate(
        picks in prop::collection::vec((action(), 0.01..1.0f64), 1..6),
        junk in prop::collection::vec("[xyz]{3,8}", 0..3),
        gamma in 0.0..=1.0f64,
        entries in cr_entries(),
        seed in any::<u64>(),
    ) {
        let schema = FeatureSchema::cramped_room();
        let m = CausalActionMatrix::from_entries(entries, &schema, "prop").unwrap();
        let mut proposals: Vec<Proposal> = picks.iter().map(|(a, p)| Proposal::new(a.name(), *p)).collect();
        proposals.extend(junk.iter().map(|t| Proposal::new(t.clone(), 0.0)));
        let z: f64 = proposals.iter().map(|p| p.p_a).sum();
        proposals.iter_mut().for_each(|p| p.p_a /= z);
        let set = ProposalSet::new(proposals);
        let mut planner = Planner::new(PlannerConfig::new(gamma, seed)).unwrap();
        let state = StateVector::new(vec![0; 14]);
        let d = planner.plan(&set, &state, &ActionVector::sentinel(7), &m).unwrap();
        prop_assert!(picks.iter().any(|(a, _)| *a == d.chosen));
        prop_assert!((d.distribution.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(d.unrecognized.len(), junk.len());
    }

    #[test]
    fn masked_parent_has_no_influence(seed in any::<u64>(), parent in 0usize..7, child in 0usize..3, bits in prop::collection::vec(0u8..=1, 7)) {
        let (s, a) = (4, 3);
        let mut model = ScaModel::new(s, a, &[5], 0.0, seed).unwrap();
        model.logits_mut()[[parent, child]] = -1e6;
        let mut x: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
        let base = model.forward_parents(&x).unwrap()[child];
        x[parent] = 1.0 - x[parent];
        prop_assert_eq!(model.forward_parents(&x).unwrap()[child], base);
    }

    #[test]
    fn own_previous_action_is_never_a_parent(seed in any::<u64>(), bits in prop::collection::vec(0u8..=1, 7), logit in -3.0..3.0f64) {
        let (s, a) = (4, 3);
        let mut model = ScaModel::new(s, a, &[5], logit, seed).unwrap();
        for i in 0..a {
            prop_assert_eq!(model.gate(s + i, i), 0.0);
            let mut x: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
            let base = model.forward_parents(&x).unwrap()[i];
            x[s + i] = 1.0 - x[s + i];
            prop_assert_eq!(model.forward_parents(&x).unwrap()[i], base);
        }
        model.logits_mut()[[s, 0]] = 50.0;
        prop_assert_eq!(model.gate(s, 0), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulator_conserves_reward(seed in any::<u64>(), layout in prop_oneof![Just("cr"), Just("aa"), Just("fc")]) {
        let layout = KitchenLayout::bundled(layout).unwrap();
        let mut policies = [
            Policy::new(PolicySpec::greedy(0.3), seed).unwrap(),
            Policy::new(PolicySpec::random_legal(), seed ^ 1).unwrap(),
        ];
        let mut state = KitchenState::reset(&layout).unwrap();
        let mut reward = 0;
        for _ in 0..200 {
            let commands = [0, 1].map(|k| policies[k].act(&state, k, &layout).map_or(Command::Idle, Command::Act));
            let out = state.step(&commands, &layout);
            // Agent 0 resolves first, so its legal choice is never invalid.
            // Agent 1 may lose a contested resource to agent 0.
            prop_assert!(!out.invalid[0]);
            reward += out.reward;
            state = out.next_state;
        }
        prop_assert_eq!(reward, DELIVERY_REWARD * i64::from(state.deliveries));
    }
}

#[test]
fn training_is_deterministic() {
    use causalplan::oracle::{generate_synthetic, SyntheticSpec};
    use causalplan::sca::{train_on_batches, TrainConfig};
    let (data, _) = generate_synthetic(&SyntheticSpec::new(3, 2, 0.4, 300, 9)).unwrap();
    let cfg = TrainConfig {
        iterations: 200,
        hidden: vec![6],
        batch_size: 32,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = train_on_batches(&data, &cfg).unwrap();
    let b = train_on_batches(&data, &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.trace, b.trace);
    let c = train_on_batches(&data, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.model, c.model);
}
