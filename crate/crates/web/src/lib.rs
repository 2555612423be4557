//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every export returns a JSON string. The `*_json` functions hold the logic
//! and are plain Rust so they can be tested natively.

use std::collections::BTreeMap;

use serde::Serialize;
use trustledger::evidence::{build_evidence_map, InteractionSet};
use trustledger::ledger::LedgerConfig;
use trustledger::providers::DetectionReport;
use trustledger::scoring::{sigma_service, Context, ScoringMechanism};
use trustledger::selection::EvidenceSelection;
use trustledger::sim::bench::{bench_throughput, parse_kind};
use trustledger::sim::{replay_fixture, run_once, AttackMetrics, ScenarioConfig};
use trustledger::Service;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct ExampleScores {
    pub all: f64,
    pub i1: f64,
    pub i2: f64,
}

#[derive(Debug, Serialize)]
pub struct WorkedExample {
    pub q: f64,
    pub uniform: ExampleScores,
    pub fresh: ExampleScores,
    /// `[q, σ(y1), σ(y1 | i1)]` under fresh-biased selection.
    pub curve: Vec<[f64; 3]>,
}

/// Scores of service `y1` in the three-interaction example, for uniform
/// selection and fresh-biased selection with ratio `q`.
pub fn worked_example_json(q: f64) -> Result<String, String> {
    let fresh = EvidenceSelection::fresh_biased(q).map_err(|e| e.to_string())?;
    let (ledger, _) = replay_fixture("worked-example").map_err(|e| e.to_string())?;
    let m = build_evidence_map(ledger.chain().events()).map_err(|e| e.to_string())?;
    let y1 = Service::from("y1");
    let mu = ScoringMechanism::average();
    let score = |ctx: Context, sel: &EvidenceSelection| -> Result<f64, String> {
        sigma_service(&m, &y1, &ctx, &mu, sel)
            .map(|r| r.value)
            .map_err(|e| e.to_string())
    };
    let only = |u: u64| Context::Set(InteractionSet::from([u]));
    let scores = |sel: &EvidenceSelection| -> Result<ExampleScores, String> {
        Ok(ExampleScores {
            all: score(Context::All, sel)?,
            i1: score(only(1), sel)?,
            i2: score(only(2), sel)?,
        })
    };
    let mut curve = Vec::new();
    for k in 1..50 {
        let qk = k as f64 / 50.0;
        let s = EvidenceSelection::fresh_biased(qk).expect("inside (0, 1)");
        curve.push([qk, score(Context::All, &s)?, score(only(1), &s)?]);
    }
    let out = WorkedExample {
        q,
        uniform: scores(&EvidenceSelection::Uniform)?,
        fresh: scores(&fresh)?,
        curve,
    };
    Ok(serde_json::to_string(&out).expect("plain data"))
}

const ATTACK_KINDS: &[&str] = &[
    "bad-mouthing",
    "good-mouthing",
    "collusion",
    "sybil",
    "on-off",
    "opportunistic",
];

fn attack_scenario(kind: &str, attackers: u32, intensity: u32, seed: u32) -> Result<ScenarioConfig, String> {
    if !ATTACK_KINDS.contains(&kind) {
        return Err(format!("unknown attack {kind:?}"));
    }
    let target = if kind == "good-mouthing" { "kiosk" } else { "printer" };
    let end = if matches!(kind, "bad-mouthing" | "good-mouthing" | "collusion") {
        "end_block = 45\n"
    } else {
        ""
    };
    let text = format!(
        r#"
name = "demo-{kind}"
seed = {seed}
duration_blocks = 70

[users]
count = 20
interaction_rate = 0.5

[[services]]
name = "printer"
quality = 0.9
price = 1000

[[services]]
name = "kiosk"
quality = 0.3
price = 1000

[[providers]]
address = "uniform"
mechanism = "average"
selection = "uniform"

[[providers]]
address = "latest"
mechanism = "latest"
selection = "deterministic"

[[providers]]
address = "filtered"
mechanism = "average"
selection = "uniform"
exclude_flagged = true

[[attacks]]
kind = "{kind}"
target = "{target}"
start_block = 25
{end}attackers = {attackers}
intensity = {intensity}
forge_attempts = 1
"#
    );
    ScenarioConfig::from_toml(&text).map_err(|e| e.to_string())
}

type Trajectories = BTreeMap<String, Vec<(u64, f64)>>;

#[derive(Debug, Serialize)]
pub struct AttackReport {
    pub target: String,
    pub attacked: Trajectories,
    pub baseline: Trajectories,
    pub attack: AttackMetrics,
    pub detections: Vec<DetectionReport>,
}

/// Runs a short scenario with one attack and its attack-free twin, and
/// returns the target's score trajectory per provider for both.
pub fn attack_json(kind: &str, attackers: u32, intensity: u32, seed: u32) -> Result<String, String> {
    let cfg = attack_scenario(kind, attackers.clamp(1, 100), intensity.clamp(1, 10), seed)?;
    let mut base_cfg = cfg.clone();
    base_cfg.attacks.clear();
    let target = cfg.attacks[0].target.clone();
    let run = run_once(&cfg).map_err(|e| e.to_string())?;
    let base = run_once(&base_cfg).map_err(|e| e.to_string())?;
    let trajectories = |m: &trustledger::sim::MetricsBundle| -> Trajectories {
        cfg.providers
            .iter()
            .map(|p| (p.address.to_string(), m.trajectory(p.address.as_str(), &target)))
            .collect()
    };
    let mut attack = run.metrics.attacks[0].clone();
    for (p, t) in trajectories(&run.metrics) {
        let b = base.metrics.trajectory(&p, &target);
        let d = t.iter().zip(&b).map(|(x, y)| (x.1 - y.1).abs()).fold(0.0, f64::max);
        attack.displacement.insert(p, d);
    }
    let report = AttackReport {
        target: target.clone(),
        attacked: trajectories(&run.metrics),
        baseline: trajectories(&base.metrics),
        attack,
        detections: run.metrics.detections.clone(),
    };
    Ok(serde_json::to_string(&report).expect("plain data"))
}

/// Throughput table for a comma-separated list of batch sizes.
pub fn bench_json(workloads: &str, kind: &str) -> Result<String, String> {
    let kind = parse_kind(kind).ok_or_else(|| format!("unknown transaction kind {kind:?}"))?;
    let sizes = workloads
        .split(',')
        .map(|w| w.trim().parse::<usize>().map_err(|_| format!("bad workload {w:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(w) = sizes.iter().find(|w| **w == 0 || **w > 50_000) {
        return Err(format!("workload {w} outside 1..=50000"));
    }
    let rows = bench_throughput(&sizes, kind, LedgerConfig::default());
    Ok(serde_json::to_string(&rows).expect("plain data"))
}

#[wasm_bindgen]
pub fn worked_example(q: f64) -> Result<String, JsError> {
    worked_example_json(q).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn attack(kind: &str, attackers: u32, intensity: u32, seed: u32) -> Result<String, JsError> {
    attack_json(kind, attackers, intensity, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn bench(workloads: &str, kind: &str) -> Result<String, JsError> {
    bench_json(workloads, kind).map_err(|e| JsError::new(&e))
}
