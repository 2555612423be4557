//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use common::{oracle_newest_average, oracle_sigma, scenario_path, selections, MapSpec, OracleMu, ATTACK_SCENARIOS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trustledger::contracts::{scan_unbacked_feedback, ContractError};
use trustledger::evidence::{build_evidence_map, InteractionSet};
use trustledger::ledger::{gas, Chain, EventPayload, LedgerConfig, TxKind, TxPayload, TxStatus, ViolationKind};
use trustledger::providers::{detect_short_lived, DetectionKind, TrustProvider};
use trustledger::scoring::{
    sigma_bruteforce, sigma_limit, sigma_online_average, sigma_service, singleton_increments, trace_weight_total,
    Context, LimitOutcome, RatingProjection, ScoringMechanism, DEFAULT_ENUMERATION_CAP,
};
use trustledger::selection::EvidenceSelection;
use trustledger::sim::{bench_throughput, replay_fixture, run_once, run_scenario, ScenarioConfig};
use trustledger::{Address, Service};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn load(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(scenario_path(name)).expect("shipped scenario")
}

fn corpus(n: usize, seed: u64) -> Vec<MapSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| MapSpec::random(&mut rng, 6, 4)).collect()
}

fn worked_example() -> Outcome {
    let t0 = Instant::now();
    let (ledger, _) = replay_fixture("worked-example").map_err(|e| e.to_string())?;
    let m = build_evidence_map(ledger.chain().events()).map_err(|e| e.to_string())?;
    let y1 = Service::from("y1");
    let avg = ScoringMechanism::average();
    let uniform = EvidenceSelection::Uniform;
    let fresh = EvidenceSelection::fresh_biased(0.5).unwrap();
    let score = |ctx: Context, sel: &EvidenceSelection| sigma_service(&m, &y1, &ctx, &avg, sel).unwrap().value;
    let only = |u: u64| Context::Set(InteractionSet::from([u]));

    // i1 has a negative then a positive feedback, i2 one positive.
    let (w_old, w_new) = (0.5 * 0.5 / 0.75, 0.5 / 0.75);
    let fresh_all = w_old * (0.0 + 1.0) / 2.0 + w_new * (1.0 + 1.0) / 2.0;
    let fresh_i1 = w_old * 0.0 + w_new * 1.0;

    let got = [
        score(Context::All, &uniform),
        score(only(1), &uniform),
        score(only(2), &uniform),
        score(Context::All, &fresh),
        score(only(1), &fresh),
    ];
    let exact = got[0] == 0.75
        && got[1] == 0.5
        && got[2] == 1.0
        && (got[3] - fresh_all).abs() < 1e-12
        && (got[4] - fresh_i1).abs() < 1e-12;
    let printed = (got[3] - 0.835).abs() <= 0.01 && (got[4] - 0.67).abs() <= 0.01;
    let elapsed = t0.elapsed();
    let detail = format!(
        "uniform {:.6} / {:.6} / {:.6}, fresh {:.6} / {:.6} in {:?}",
        got[0], got[1], got[2], got[3], got[4], elapsed
    );
    check(
        exact && printed && elapsed < Duration::from_secs(1),
        detail.clone(),
        detail,
    )
}

fn weight_normalisation() -> Outcome {
    let t0 = Instant::now();
    let maps = corpus(600, 2);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for spec in &maps {
        let m = spec.build();
        for sel in selections() {
            let total =
                trace_weight_total(&m, &spec.all_uids(), &sel, DEFAULT_ENUMERATION_CAP).map_err(|e| e.to_string())?;
            worst = worst.max((total - 1.0).abs());
            checked += 1;
        }
    }
    let elapsed = t0.elapsed();
    let detail = format!("{checked} map/selection pairs, max |Σ−1| = {worst:.2e}, {elapsed:?}");
    check(
        worst < 1e-9 && elapsed < Duration::from_secs(30),
        detail.clone(),
        detail,
    )
}

fn score_bounds() -> Outcome {
    let maps = corpus(600, 2);
    let mut violations = 0;
    let mut checked = 0;
    for spec in &maps {
        let m = spec.build();
        let a = spec.all_uids();
        let plus = m.with_feedback(&a).len() as f64;
        for sel in selections() {
            for mu in [ScoringMechanism::average(), ScoringMechanism::latest()] {
                let s = sigma_bruteforce(&m, &a, &mu, &sel).map_err(|e| e.to_string())?.value;
                violations += (s > 1.0 + 1e-12) as usize;
                violations += (plus > 0.0 && s > plus + 1e-12) as usize;
                checked += 1;
            }
            // a mechanism bounded by trace size but not by 1
            if let Some(s) = oracle_sigma(&m, &a, &sel, OracleMu::Sum) {
                violations += (s > plus + 1e-12) as usize;
            }
        }
    }
    let detail = format!("{checked} scores, {violations} violations");
    check(violations == 0, detail.clone(), detail)
}

fn online_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut rereviewed = 0;
    let n = 250;
    for _ in 0..n {
        let mut spec = MapSpec::random(&mut rng, 10, 3);
        // make sure some interaction is reviewed more than once
        if spec.interactions.iter().all(|(_, r)| r.len() < 2) {
            let k = rng.gen_range(0..spec.interactions.len());
            spec.interactions[k]
                .1
                .push((rng.gen_range(0..=5), rng.gen_range(0..40)));
            spec.interactions[k]
                .1
                .push((rng.gen_range(0..=5), rng.gen_range(0..40)));
        }
        rereviewed += 1;
        let m = spec.build();
        let stream = spec.stream();
        let online = sigma_online_average(stream.iter().copied(), RatingProjection::default(), 0.5);
        let brute = sigma_bruteforce(
            &m,
            &spec.all_uids(),
            &ScoringMechanism::average(),
            &EvidenceSelection::Deterministic,
        )
        .map_err(|e| e.to_string())?
        .value;
        let oracle = oracle_newest_average(&stream).unwrap_or(0.5);
        worst = worst.max((online - brute).abs()).max((online - oracle).abs());
    }
    let detail = format!("{n} instances ({rereviewed} with re-reviews), max diff {worst:.2e}");
    check(worst <= 1e-12, detail.clone(), detail)
}

fn non_convergence() -> Outcome {
    let (ledger, _) = replay_fixture("alternating-stream:10000").map_err(|e| e.to_string())?;
    let m = build_evidence_map(ledger.chain().events()).map_err(|e| e.to_string())?;
    let uids: Vec<u64> = m.interactions().map(|i| i.uid).collect();
    let sel = EvidenceSelection::Deterministic;
    let run = |mu: ScoringMechanism| {
        sigma_limit(&m, singleton_increments(uids.iter().copied()), &mu, &sel, 1e-4, 10_000).map_err(|e| e.to_string())
    };
    let latest = run(ScoringMechanism::latest())?;
    let average = run(ScoringMechanism::average())?;
    let ok = matches!(latest, LimitOutcome::NonConvergent { .. })
        && matches!(average, LimitOutcome::Converged { value, .. } if (value - 0.5).abs() < 1e-3);
    let detail = format!("latest {latest:?}; average {average:?}");
    check(ok, detail.clone(), detail)
}

fn feedback_backing() -> Outcome {
    let mut problems = Vec::new();
    let (mut submitted, mut rejected, mut direct) = (0u64, 0u64, 0u64);
    for name in ATTACK_SCENARIOS {
        let out = run_once(&load(name)).map_err(|e| e.to_string())?;
        let chain = out.ledger.chain();
        let unbacked = scan_unbacked_feedback(chain).len();
        if unbacked > 0 {
            problems.push(format!("{name}: {unbacked} unbacked feedbacks"));
        }
        for a in &out.metrics.attacks {
            submitted += a.forged_submitted;
            rejected += a.forged_rejected;
            if a.forged_accepted > 0 {
                problems.push(format!("{name}: {} forged feedbacks accepted", a.forged_accepted));
            }
        }
        // every reverted review carries one of the feedback-check errors
        for t in chain.blocks().iter().flat_map(|b| &b.transactions) {
            if let (TxPayload::ReviewSubmission { .. }, TxStatus::Reverted(e)) = (&t.tx.payload, &t.status) {
                if !matches!(
                    e,
                    ContractError::NoSuchInteraction { .. } | ContractError::SubmitterMismatch { .. }
                ) {
                    problems.push(format!("{name}: unexpected revert {e:?}"));
                }
            }
        }
        // direct calls against the final contract state
        let mut state = out.ledger.contracts().clone();
        let records: Vec<_> = state
            .feedback_state()
            .valid_interactions
            .iter()
            .map(|(u, r)| (*u, r.user.clone()))
            .collect();
        let outsider = Address::new("nobody");
        for (uid, user) in records.iter().take(50) {
            let attempts = [
                state.exec_review_submission(&outsider, &outsider, *uid, 0),
                state.exec_review_submission(&outsider, user, *uid, 0),
                state.exec_review_submission(user, user, uid + 10_000_000, 0),
            ];
            for (k, r) in attempts.iter().enumerate() {
                direct += 1;
                let typed = match k {
                    2 => matches!(r, Err(ContractError::NoSuchInteraction { .. })),
                    _ => matches!(r, Err(ContractError::SubmitterMismatch { .. })),
                };
                if !typed {
                    problems.push(format!("{name}: direct attempt {k} on uid {uid} gave {r:?}"));
                }
            }
        }
    }
    let detail = format!(
        "{} scenarios, forged {rejected}/{submitted} rejected, {direct} direct attempts rejected",
        ATTACK_SCENARIOS.len()
    );
    check(
        problems.is_empty() && submitted > 0 && submitted == rejected,
        detail.clone(),
        format!("{detail}; {}", problems.join("; ")),
    )
}

fn block_model() -> Outcome {
    let rows = bench_throughput(
        &[10, 100, 1000, 10_000],
        TxKind::ReviewSubmission,
        LedgerConfig::default(),
    );
    let single = rows[..3]
        .iter()
        .all(|r| r.blocks == 1 && r.avg_tx_per_block == r.workload as f64);
    let capped = rows[3].avg_tx_per_block == 5000.0 && rows[3].blocks == 2;
    let monotone = rows[..3].windows(2).all(|w| w[1].tps >= w[0].tps);
    let detail = rows
        .iter()
        .map(|r| {
            format!(
                "{}: {} blk, {:.0} tx/blk, {:.2} tps",
                r.workload, r.blocks, r.avg_tx_per_block, r.tps
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    check(single && capped && monotone, detail.clone(), detail)
}

fn gas_trend() -> Outcome {
    let rows = bench_throughput(
        &[10, 100, 1000, 10_000],
        TxKind::ReviewSubmission,
        LedgerConfig::default(),
    );
    let monotone = rows.windows(2).all(|w| w[1].avg_fee >= w[0].avg_fee);
    let grew = rows[3].avg_fee > rows[0].avg_fee;
    let detail = rows
        .iter()
        .map(|r| format!("{}: {:.3e}", r.workload, r.avg_fee))
        .collect::<Vec<_>>()
        .join("; ");
    check(
        monotone && grew,
        format!("avg fee {detail}"),
        format!("avg fee {detail}"),
    )
}

fn attack_economics() -> Outcome {
    let mut problems = Vec::new();

    let cfg = load("sybil");
    let attack = &cfg.attacks[0];
    let out = run_once(&cfg).map_err(|e| e.to_string())?;
    let clones: BTreeSet<String> = out.metrics.attacks[0].accounts.iter().cloned().collect();
    let spent: u128 = clones
        .iter()
        .map(|a| (attack.attacker_balance - out.ledger.balance(&Address::new(a.as_str())).unwrap_or(0)) as u128)
        .sum();
    let price = cfg.services.iter().find(|s| s.name == attack.target).unwrap().price as u128;
    let base_fee = (gas::ACCESS_REQUEST + gas::REVIEW_SUBMISSION) as u128 * out.ledger.config().base_price as u128;
    let floor = clones.len() as u128 * (price + base_fee);
    if clones.len() != 20 || spent < floor {
        problems.push(format!("{} clones spent {spent} < {floor}", clones.len()));
    }
    let m = build_evidence_map(out.ledger.chain().events()).map_err(|e| e.to_string())?;
    let flagged: BTreeSet<String> = detect_short_lived(&m, cfg.detectors.min_lifetime_blocks)
        .into_iter()
        .map(|r| r.subject)
        .collect();
    let honest_flagged = flagged.difference(&clones).count();
    let clones_flagged = flagged.intersection(&clones).count();
    if clones_flagged != 20 || honest_flagged != 0 {
        problems.push(format!("short-lived: {clones_flagged} clones, {honest_flagged} others"));
    }

    let collusion = load("collusion-spike");
    let out = run_scenario(&collusion).map_err(|e| e.to_string())?;
    let a = &out.metrics.attacks[0];
    let in_window = a
        .detections
        .iter()
        .filter(|r| r.kind == DetectionKind::FeedbackSpike && r.window.0 < a.end_block && r.window.1 >= a.start_block)
        .count();
    if in_window == 0 {
        problems.push("no spike in the collusion window".into());
    }
    let mut baseline_spikes = 0;
    for seed in 0..5 {
        let mut base = collusion.clone();
        base.attacks.clear();
        base.seed = collusion.seed + seed;
        let out = run_once(&base).map_err(|e| e.to_string())?;
        baseline_spikes += out
            .metrics
            .detections
            .iter()
            .filter(|r| r.kind == DetectionKind::FeedbackSpike)
            .count();
    }
    if baseline_spikes > 0 {
        problems.push(format!("{baseline_spikes} spikes in attack-free baselines"));
    }
    let detail = format!(
        "sybil spent {spent} ≥ {floor}, {clones_flagged}/20 clones and {honest_flagged} others flagged; \
         {in_window} spike(s) in window, {baseline_spikes} in 5 baselines"
    );
    check(
        problems.is_empty(),
        detail.clone(),
        format!("{detail}; {}", problems.join("; ")),
    )
}

fn universality() -> Outcome {
    let cfg = load("honest");
    let out = run_once(&cfg).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut points = 0;
    for s in &cfg.services {
        let a = out.metrics.trajectory("tp-uniform", &s.name);
        let b = out.metrics.trajectory("tp-uniform-b", &s.name);
        if a.len() != b.len() || a.is_empty() {
            return Err(format!(
                "{}: trajectories of length {} and {}",
                s.name,
                a.len(),
                b.len()
            ));
        }
        for ((ba, sa), (bb, sb)) in a.iter().zip(&b) {
            if ba != bb {
                return Err(format!("{}: block {ba} against {bb}", s.name));
            }
            worst = worst.max((sa - sb).abs());
            points += 1;
        }
    }
    // two fresh providers replaying the finished chain
    let conf = cfg
        .providers
        .iter()
        .find(|p| p.address.as_str() == "tp-fresh")
        .unwrap()
        .clone();
    let mut p1 = TrustProvider::new(conf.clone());
    let mut p2 = TrustProvider::new(conf);
    p1.ingest_chain(out.ledger.chain()).map_err(|e| e.to_string())?;
    p2.ingest_chain(out.ledger.chain()).map_err(|e| e.to_string())?;
    for (x, y) in p1.history().iter().zip(p2.history()) {
        worst = worst.max((x.score - y.score).abs());
        points += 1;
    }
    let same_len = p1.history().len() == p2.history().len() && !p1.history().is_empty();
    let detail = format!("{points} points, max diff {worst:.1e}");
    check(worst <= 1e-12 && same_len, detail.clone(), detail)
}

fn expect_violation(chain: &Chain, block: u64, kind: ViolationKind) -> Result<(), String> {
    match chain.verify() {
        Err(v) if v.block == block && v.kind == kind => Ok(()),
        other => Err(format!("expected {kind:?} at block {block}, got {other:?}")),
    }
}

fn chain_integrity() -> Outcome {
    let mut names: Vec<&str> = ATTACK_SCENARIOS.to_vec();
    names.extend(["honest", "worked-example"]);
    let mut chain = None;
    for name in &names {
        let out = run_once(&load(name)).map_err(|e| e.to_string())?;
        out.ledger.verify_chain().map_err(|v| format!("{name}: {v}"))?;
        if *name == "collusion-spike" {
            chain = Some(out.ledger.snapshot());
        }
    }
    let chain = chain.unwrap();
    let find = |pred: &dyn Fn(&EventPayload) -> bool, after: u64| {
        chain
            .blocks()
            .iter()
            .find(|b| b.number > after && b.events.iter().any(|e| pred(&e.payload)))
            .map(|b| b.number)
            .unwrap()
    };
    let is_feedback = |p: &EventPayload| matches!(p, EventPayload::Feedback { .. });
    let is_interaction = |p: &EventPayload| matches!(p, EventPayload::Interaction { .. });

    // rating flip
    let b = find(&is_feedback, 20);
    let mut t = chain.clone();
    let ev = t
        .block_mut_for_tamper(b)
        .unwrap()
        .events
        .iter_mut()
        .find(|e| is_feedback(&e.payload))
        .unwrap();
    if let EventPayload::Feedback { rating, .. } = &mut ev.payload {
        *rating = if *rating >= 3 { 0 } else { 5 };
    }
    expect_violation(&t, b, ViolationKind::HashMismatch)?;

    // uid duplication, resealed so only the uid check can catch it
    let first = find(&is_interaction, 0);
    let dup_at = find(&is_interaction, first + 10);
    let mut t = chain.clone();
    let old_uid = chain
        .block(first)
        .unwrap()
        .events
        .iter()
        .find_map(|e| e.payload.uid())
        .unwrap();
    let ev = t
        .block_mut_for_tamper(dup_at)
        .unwrap()
        .events
        .iter_mut()
        .find(|e| is_interaction(&e.payload))
        .unwrap();
    if let EventPayload::Interaction { uid, .. } = &mut ev.payload {
        *uid = old_uid;
    }
    t.reseal_from(dup_at);
    expect_violation(&t, dup_at, ViolationKind::DuplicateUid(old_uid))?;

    // parent-hash break, block hash recomputed so the link is what fails
    let brk = chain.len() as u64 / 2;
    let mut t = chain.clone();
    let blk = t.block_mut_for_tamper(brk).unwrap();
    blk.parent_hash = chain.block(brk - 2).unwrap().hash;
    blk.hash = blk.recompute_hash();
    expect_violation(&t, brk, ViolationKind::ParentHashMismatch)?;

    Ok(format!(
        "{} chains verify; rating flip at {b}, duplicate uid at {dup_at}, parent break at {brk} located",
        names.len()
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("worked example", worked_example),
        ("trace weights sum to one", weight_normalisation),
        ("score bounds", score_bounds),
        ("online average equals enumeration", online_equivalence),
        ("limit counterexample", non_convergence),
        ("feedback needs an interaction", feedback_backing),
        ("block model", block_model),
        ("fee trend", gas_trend),
        ("attack cost and detection", attack_economics),
        ("identical providers agree", universality),
        ("chain integrity", chain_integrity),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(d) => println!("PASS {:>2} {name}: {d}", k + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
