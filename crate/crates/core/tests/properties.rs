mod common;

use common::{oracle_newest_average, oracle_sigma, oracle_weights, MapSpec, OracleMu};
use proptest::prelude::*;
use trustledger::evidence::{enumerate_maximal_traces, InteractionSet};
use trustledger::ledger::{Chain, Ledger, LedgerConfig, Transaction};
use trustledger::scoring::{
    sigma_bruteforce, sigma_linear, sigma_online_average, trace_weight_total, RatingProjection, ScoringMechanism,
    DEFAULT_ENUMERATION_CAP,
};
use trustledger::selection::EvidenceSelection;

fn review_strategy() -> impl Strategy<Value = (u8, u8)> {
    (0..=5u8, 0..40u8)
}

fn map_spec(max_interactions: usize, max_feedbacks: usize) -> impl Strategy<Value = MapSpec> {
    (
        prop::collection::vec(
            (0..2u8, prop::collection::vec(review_strategy(), 0..=max_feedbacks)),
            1..=max_interactions,
        ),
        prop::collection::vec(review_strategy(), 0..3),
    )
        .prop_map(|(interactions, loose)| MapSpec { interactions, loose })
}

fn selection() -> impl Strategy<Value = EvidenceSelection> {
    prop_oneof![
        Just(EvidenceSelection::Deterministic),
        Just(EvidenceSelection::Uniform),
        (0.01..0.99f64).prop_map(|q| EvidenceSelection::fresh_biased(q).unwrap()),
        (0.01..0.99f64).prop_map(|q| EvidenceSelection::geometric(q).unwrap()),
    ]
}

fn subset(spec: &MapSpec, mask: u16) -> InteractionSet {
    spec.all_uids()
        .into_iter()
        .filter(|u| mask & (1 << (u - 1)) != 0)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn selection_weights_are_a_distribution(sel in selection(), n in 1usize..12) {
        let w = sel.weights(n);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (a, b) in w.iter().zip(oracle_weights(&sel, n)) {
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(*a >= 0.0);
        }
    }

    #[test]
    fn fresh_bias_favours_newer_feedback(q in 0.01..0.99f64, n in 2usize..12) {
        let w = EvidenceSelection::fresh_biased(q).unwrap().weights(n);
        prop_assert!(w.windows(2).all(|p| p[0] <= p[1]));
        let g = EvidenceSelection::geometric(q).unwrap().weights(n);
        prop_assert!(g.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn trace_weights_sum_to_one(spec in map_spec(6, 4), sel in selection(), mask: u16) {
        let m = spec.build();
        let a = subset(&spec, mask);
        let total = trace_weight_total(&m, &a, &sel, DEFAULT_ENUMERATION_CAP).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-9, "total {}", total);
    }

    #[test]
    fn traces_are_maximal_and_distinct(spec in map_spec(5, 3), mask: u16) {
        let m = spec.build();
        let a = subset(&spec, mask);
        let plus = m.with_feedback(&a);
        let traces: Vec<_> = enumerate_maximal_traces(&m, &a).collect();
        let expected: usize = plus.iter().map(|u| m.feedbacks_of(*u).len()).product();
        prop_assert_eq!(traces.len(), expected);
        let mut seen = std::collections::BTreeSet::new();
        for t in &traces {
            prop_assert!(t.validate(&m).is_ok());
            prop_assert_eq!(t.domain().into_iter().collect::<Vec<_>>(), plus.clone());
            let key: Vec<_> = t.iter().collect();
            prop_assert!(seen.insert(key), "trace enumerated twice");
        }
    }

    #[test]
    fn bruteforce_matches_oracle(spec in map_spec(5, 3), sel in selection(), mask: u16) {
        let m = spec.build();
        let a = subset(&spec, mask);
        for (mu, omu) in [
            (ScoringMechanism::average(), OracleMu::Average),
            (ScoringMechanism::latest(), OracleMu::Latest),
        ] {
            let got = sigma_bruteforce(&m, &a, &mu, &sel).unwrap().value;
            let want = oracle_sigma(&m, &a, &sel, omu).unwrap_or(0.5);
            prop_assert!((got - want).abs() < 1e-12, "{} vs {}", got, want);
            let lin = sigma_linear(&m, &a, &mu, &sel).value;
            prop_assert!((lin - want).abs() < 1e-12, "linear {} vs {}", lin, want);
        }
    }

    #[test]
    fn score_bounds(spec in map_spec(6, 4), sel in selection(), mask: u16) {
        let m = spec.build();
        let a = subset(&spec, mask);
        let plus = m.with_feedback(&a).len() as f64;
        for mu in [ScoringMechanism::average(), ScoringMechanism::latest()] {
            let s = sigma_bruteforce(&m, &a, &mu, &sel).unwrap().value;
            prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
            if plus > 0.0 {
                prop_assert!(s <= plus + 1e-12);
            }
        }
        if let Some(s) = oracle_sigma(&m, &a, &sel, OracleMu::Sum) {
            prop_assert!(s <= plus + 1e-12);
        }
    }

    #[test]
    fn online_average_matches_bruteforce(spec in map_spec(10, 3)) {
        let m = spec.build();
        let a = spec.all_uids();
        let stream = spec.stream();
        let online = sigma_online_average(stream.iter().copied(), RatingProjection::default(), 0.5);
        let brute = sigma_bruteforce(&m, &a, &ScoringMechanism::average(), &EvidenceSelection::Deterministic)
            .unwrap()
            .value;
        prop_assert!((online - brute).abs() < 1e-12, "{} vs {}", online, brute);
        prop_assert!((online - oracle_newest_average(&stream).unwrap_or(0.5)).abs() < 1e-12);
    }

    #[test]
    fn raising_a_rating_never_lowers_the_score(spec in map_spec(5, 3), sel in selection(), pick: usize) {
        let reviewed: Vec<(usize, usize)> = spec
            .interactions
            .iter()
            .enumerate()
            .flat_map(|(k, (_, r))| (0..r.len()).map(move |j| (k, j)))
            .collect();
        prop_assume!(!reviewed.is_empty());
        let (k, j) = reviewed[pick % reviewed.len()];
        let mut better = spec.clone();
        better.interactions[k].1[j].0 = 5;
        let a = spec.all_uids();
        for mu in [ScoringMechanism::average(), ScoringMechanism::latest()] {
            let before = sigma_bruteforce(&spec.build(), &a, &mu, &sel).unwrap().value;
            let after = sigma_bruteforce(&better.build(), &a, &mu, &sel).unwrap().value;
            prop_assert!(after >= before - 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn chain_dump_round_trips(ratings in prop::collection::vec(-1i64..8, 1..20), transfers in 0usize..5) {
        let mut l = Ledger::new(LedgerConfig::default());
        l.create_account("alice", 1 << 50).unwrap();
        l.create_account("bob", 1 << 50).unwrap();
        l.create_account("owner", 0).unwrap();
        l.register_resource("svc", "owner", 10).unwrap();
        for _ in &ratings {
            l.submit(Transaction::access("alice", "svc", 10)).unwrap();
        }
        l.produce_next_block();
        for (k, r) in ratings.iter().enumerate() {
            l.submit(Transaction::review("alice", k as u64 + 1, *r)).unwrap();
        }
        for _ in 0..transfers {
            l.submit(Transaction::transfer("bob", "alice", 1)).unwrap();
        }
        l.produce_next_block();
        let chain = l.snapshot();
        let back = Chain::read_jsonl(chain.to_jsonl().as_bytes()).unwrap();
        prop_assert_eq!(&back, &chain);
        prop_assert!(back.verify().is_ok());
    }
}
