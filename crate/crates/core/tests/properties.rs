mod common;

use proptest::prelude::*;

use umis::bn::random_bn;
use umis::dataset::{compute_priors, encode, EncodingMode};
use umis::exact::{exact_conditional, exact_posterior};
use umis::harness::{beta_sweep, build_test_set, evaluate_predictions, BetaSweepOptions};
use umis::proposals::{estimate, kish_ess_log, ProposalSpec, WeightAccumulator};
use umis::um::{load_model, save_model, MlpModel};
use umis::{rng, FullAssignment, NodeId, NodeState, PartialState, Workers};

use common::{assignment, brute_posterior, joint, max_abs_diff, reveal};

fn net() -> impl Strategy<Value = (usize, usize, f64, u64)> {
    (1usize..=9, 0usize..=4, 0.0f64..=1.0, any::<u64>())
}

fn state(n: usize) -> impl Strategy<Value = PartialState> {
    prop::collection::vec(prop_oneof![Just(NodeState::True), Just(NodeState::False), Just(NodeState::Unobserved)], n)
        .prop_map(PartialState)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn topological_order_is_a_parent_first_permutation((n, k, p, seed) in net()) {
        let bn = random_bn(n, k, p, seed).unwrap();
        let order = bn.topological_order();
        let mut pos = vec![usize::MAX; n];
        for (i, id) in order.iter().enumerate() {
            prop_assert_eq!(pos[id.0], usize::MAX);
            pos[id.0] = i;
        }
        for node in bn.nodes() {
            prop_assert!(node.parents.len() <= k);
            for parent in &node.parents {
                prop_assert!(pos[parent.0] < pos[node.id.0]);
            }
        }
    }

    #[test]
    fn joint_sums_to_one((n, k, p, seed) in net()) {
        let bn = random_bn(n, k, p, seed).unwrap();
        let total: f64 = (0..1u64 << n).map(|b| bn.log_joint(&FullAssignment(assignment(b, n))).exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "{}", total);
        for b in 0..1u64 << n {
            let x = assignment(b, n);
            let lj = bn.log_joint(&FullAssignment(x.clone()));
            prop_assert!((lj - joint(&bn, &x).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_matches_brute_force((n, k, p, seed) in net(), mask_bits in any::<u64>()) {
        let bn = random_bn(n, k, p, seed).unwrap();
        let x = bn.ancestral_sample(&mut rng::seeded(seed ^ 1));
        let mask: Vec<bool> = (0..n).map(|i| mask_bits >> i & 1 == 1).collect();
        let ev = reveal(&x, &mask);
        let (truth, _) = brute_posterior(&bn, &ev);
        let got = exact_posterior(&bn, &ev).unwrap();
        prop_assert!(max_abs_diff(got.as_slice(), &truth) < 1e-12);
    }

    #[test]
    fn chain_rule_of_exact_conditionals((n, k, p, seed) in net(), bits in any::<u64>()) {
        let bn = random_bn(n, k, p, seed).unwrap();
        let x = assignment(bits, n);
        let mut state = PartialState::unobserved(n);
        let mut log_p = 0.0;
        for &node in bn.topological_order() {
            let q = exact_conditional(&bn, node, &state).unwrap();
            log_p += if x[node.0] { q } else { 1.0 - q }.ln();
            state = state.with(node, x[node.0]);
        }
        prop_assert!((log_p - joint(&bn, &x).ln()).abs() < 1e-9);
    }

    #[test]
    fn encodings_are_injective(n in 1usize..8, a in any::<u64>(), seed in any::<u64>()) {
        let bn = random_bn(n, 2, 0.5, seed).unwrap();
        let priors = compute_priors(&bn);
        let decode = |bits: u64| PartialState((0..n).map(|i| match bits >> (2 * i) & 3 {
            0 => NodeState::Unobserved,
            1 => NodeState::False,
            _ => NodeState::True,
        }).collect());
        let s = decode(a);
        for mode in [EncodingMode::TwoBit, EncodingMode::FlagPlusPrior] {
            let e = encode(&s, mode, priors);
            prop_assert_eq!(e.0.len(), 2 * n);
            prop_assert_eq!(e.observed_flags(), s.states().iter().map(|v| v.is_observed()).collect::<Vec<_>>());
            for other in [a.wrapping_add(1), a ^ 0b10, a ^ 0b1] {
                let t = decode(other);
                if t != s {
                    prop_assert_ne!(&encode(&t, mode, priors), &e);
                }
            }
        }
    }

    #[test]
    fn hybrid_endpoints_match_pure_proposals(seed in any::<u64>(), ev in state(6)) {
        let bn = random_bn(6, 3, 0.5, seed).unwrap();
        let model = MlpModel::init(&[12, 16, 6], EncodingMode::FlagPlusPrior, compute_priors(&bn).clone(), seed).unwrap();
        let w = Workers::sequential(2);
        let run = |spec: ProposalSpec| estimate(&bn, &ev, &spec, Some(&model), 700, seed, &w).unwrap();
        prop_assert_eq!(run(ProposalSpec::hybrid(0.0)), run(ProposalSpec::prior()));
        prop_assert_eq!(run(ProposalSpec::hybrid(1.0)), run(ProposalSpec::marginal_product()));
    }

    #[test]
    fn estimates_ignore_a_common_log_weight_shift(
        log_w in prop::collection::vec(-30.0f64..5.0, 1..60),
        shift in -500.0f64..500.0,
        seed in any::<u64>(),
    ) {
        let n = 4;
        let mut r = rng::seeded(seed);
        let values: Vec<Vec<bool>> = log_w.iter().map(|_| {
            (0..n).map(|_| rand::Rng::random::<bool>(&mut r)).collect()
        }).collect();
        let finish = |delta: f64| {
            let mut acc = WeightAccumulator::new(n);
            for (lw, v) in log_w.iter().zip(&values) {
                acc.add(lw + delta, v);
            }
            acc.finish(&PartialState::unobserved(n)).unwrap()
        };
        let (a, b) = (finish(0.0), finish(shift));
        prop_assert!(max_abs_diff(a.marginals.as_slice(), b.marginals.as_slice()) < 1e-12);
        prop_assert!((a.ess - b.ess).abs() < 1e-9 * a.ess);
        prop_assert!(a.ess >= 1.0 - 1e-12 && a.ess <= log_w.len() as f64 + 1e-9);
        prop_assert!((a.ess - kish_ess_log(&log_w).unwrap()).abs() < 1e-9 * a.ess);
        prop_assert!((b.log_evidence() - a.log_evidence() - shift).abs() < 1e-9);
    }

    #[test]
    fn supplied_evidence_order_is_irrelevant(seed in any::<u64>(), bits in any::<u8>(), mask in any::<u8>()) {
        let bn = random_bn(5, 2, 0.5, seed).unwrap();
        let model = MlpModel::init(&[10, 8, 5], EncodingMode::TwoBit, compute_priors(&bn).clone(), seed).unwrap();
        let picks: Vec<usize> = (0..5).filter(|i| mask >> i & 1 == 1).collect();
        let forward = picks.iter().fold(PartialState::unobserved(5), |s, &i| s.with(NodeId(i), bits >> i & 1 == 1));
        let backward = picks.iter().rev().fold(PartialState::unobserved(5), |s, &i| s.with(NodeId(i), bits >> i & 1 == 1));
        prop_assert_eq!(model.predict_marginals(&forward).unwrap(), model.predict_marginals(&backward).unwrap());
    }

    #[test]
    fn model_files_round_trip(hidden in prop::collection::vec(1usize..12, 1..3), n in 1usize..6, seed in any::<u64>()) {
        let bn = random_bn(n, 2, 0.5, seed).unwrap();
        let mut sizes = vec![2 * n];
        sizes.extend(&hidden);
        sizes.push(n);
        let model = MlpModel::init(&sizes, EncodingMode::FlagPlusPrior, compute_priors(&bn).clone(), seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.umnn");
        save_model(&model, &path).unwrap();
        prop_assert_eq!(load_model(&path).unwrap(), model);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn metric_ordering_and_sweep_shape(seed in any::<u64>(), nb in 1usize..4, nm in 1usize..3) {
        let bn = random_bn(6, 2, 0.4, seed).unwrap();
        let cases = build_test_set(&bn, 4, &mut rng::seeded(seed)).unwrap();
        let model = MlpModel::init(&[12, 8, 6], EncodingMode::FlagPlusPrior, compute_priors(&bn).clone(), seed).unwrap();
        let preds = model.predict_batch(&cases.iter().map(|c| c.evidence.clone()).collect::<Vec<_>>()).unwrap();
        let m = evaluate_predictions(&preds, &cases, false).unwrap();
        prop_assert!(m.mae <= m.max_ae + 1e-15);
        let opts = BetaSweepOptions {
            betas: (0..nb).map(|i| i as f64 / nb as f64).collect(),
            sample_counts: (1..=nm).map(|i| 50 * i).collect(),
            seed,
            all_nodes: false,
            oracle_reference: true,
        };
        let sweep = beta_sweep(&bn, &model, &cases, &opts, &Workers::sequential(1)).unwrap();
        prop_assert_eq!(sweep.rows.len(), nb * nm);
        prop_assert_eq!(sweep.reference.len(), nm);
        for row in &sweep.rows {
            prop_assert!(row.ess.unwrap() <= row.n_samples as f64 + 1e-9);
        }
        for row in &sweep.reference {
            prop_assert!((row.ess.unwrap() - row.n_samples as f64).abs() < 1e-6);
        }
    }
}
