//! Seeded scenario engine.
//!
//! Each simulated block runs the same loop: users and attackers submit
//! transactions, the ledger seals a block, trust providers ingest it and
//! submit their score updates for the next one. Honest users review every
//! interaction in the block after it lands, rating `R_max` with probability
//! equal to the service's quality at that time and `0` otherwise.
//!
//! Honest users and attackers draw from separate random streams, so a run
//! and its attack-free baseline see identical honest behaviour.

pub mod bench;
pub mod config;
pub mod fixtures;
pub mod metrics;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::contracts::{cache_provenance_holds, scan_unbacked_feedback};
use crate::evidence::build_evidence_map;
use crate::ledger::{gas, Block, EventPayload, Ledger, LedgerError, Transaction, TxPayload};
use crate::providers::{
    detect_serial_negative, detect_short_lived, detect_spike, DetectionKind, ProviderError, TrustProvider,
};
use crate::scoring::{Context, RatingProjection};
use crate::{Address, Service};

pub use bench::{bench_throughput, bench_workload, BenchRow, PRESEEDED_ACCESSES};
pub use config::{AttackConfig, AttackKind, ConfigError, ScenarioConfig, ServiceConfig, UserConfig};
pub use fixtures::{apply_fixture, replay_fixture, FixtureError, FixtureInfo};
pub use metrics::{AttackMetrics, BlockMetrics, MetricsBundle, RunSummary, ScoreRow};

const PROVIDER_BALANCE: u64 = 1 << 60;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// A finished run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: MetricsBundle,
    pub ledger: Ledger,
    pub providers: Vec<TrustProvider>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Owner {
    Honest,
    Attack(usize),
}

struct AttackState {
    accounts: Vec<Address>,
    own_uids: BTreeSet<u64>,
    planned_accesses: u64,
    interactions: u64,
    feedbacks: u64,
    forged_submitted: u64,
    forged_rejected: u64,
    forged_accepted: u64,
}

struct Engine<'a> {
    cfg: &'a ScenarioConfig,
    ledger: Ledger,
    providers: Vec<TrustProvider>,
    honest_rng: ChaCha8Rng,
    attack_rng: ChaCha8Rng,
    users: Vec<Address>,
    owners: BTreeMap<Address, Owner>,
    attacks: Vec<AttackState>,
    /// Interactions awaiting their review: (uid, user, service, step).
    to_review: Vec<(u64, Address, Service, u64)>,
    /// Chain blocks that precede step 1.
    offset: u64,
    blocks: Vec<BlockMetrics>,
    scores: Vec<ScoreRow>,
    services: Vec<Service>,
}

/// Runs the scenario and, if it has attacks, its attack-free baseline for
/// score displacement.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutput, SimError> {
    let mut out = run_once(config)?;
    if !config.attacks.is_empty() {
        let mut base_cfg = config.clone();
        base_cfg.attacks.clear();
        let base = run_once(&base_cfg)?;
        fill_displacement(&mut out.metrics, &base.metrics, config);
    }
    Ok(out)
}

/// Runs the scenario alone; displacement is left empty.
pub fn run_once(config: &ScenarioConfig) -> Result<RunOutput, SimError> {
    config.validate()?;
    let mut e = Engine::setup(config)?;
    for step in 1..=config.duration_blocks {
        e.step(step)?;
    }
    Ok(e.finish())
}

fn fill_displacement(run: &mut MetricsBundle, base: &MetricsBundle, cfg: &ScenarioConfig) {
    let providers: Vec<String> = cfg.providers.iter().map(|p| p.address.to_string()).collect();
    for k in 0..run.attacks.len() {
        for p in &providers {
            let a = run.trajectory(p, &run.attacks[k].target);
            let am = &mut run.attacks[k];
            let b: BTreeMap<u64, f64> = base.trajectory(p, &am.target).into_iter().collect();
            let d = a
                .iter()
                .filter_map(|(blk, s)| b.get(blk).map(|t| (s - t).abs()))
                .fold(0.0, f64::max);
            am.displacement.insert(p.clone(), d);
        }
    }
}

impl<'a> Engine<'a> {
    fn setup(cfg: &'a ScenarioConfig) -> Result<Self, SimError> {
        let mut ledger = Ledger::new(cfg.ledger);
        let mut services = Vec::new();
        if let Some(f) = &cfg.fixture {
            let info = apply_fixture(&mut ledger, f)?;
            services.extend(info.services.iter().map(|s| Service::from(s.as_str())));
        }
        let offset = ledger.head().number;

        for s in &cfg.services {
            let owner = format!("owner-{}", s.name);
            ledger.create_account(owner.as_str(), 0)?;
            ledger.register_resource(s.name.as_str(), owner.as_str(), s.price)?;
            services.push(Service::from(s.name.as_str()));
        }
        let mut owners = BTreeMap::new();
        let users: Vec<Address> = (1..=cfg.users.count)
            .map(|k| Address::new(format!("user-{k:04}")))
            .collect();
        for u in &users {
            ledger.create_account(u.clone(), cfg.users.balance)?;
            owners.insert(u.clone(), Owner::Honest);
        }
        let mut attacks = Vec::new();
        for (a, ac) in cfg.attacks.iter().enumerate() {
            let prefix = if ac.kind == AttackKind::Sybil {
                "sybil"
            } else {
                "attacker"
            };
            let accounts: Vec<Address> = if ac.kind.uses_accounts() {
                (1..=ac.attackers)
                    .map(|k| Address::new(format!("{prefix}-{a}-{k:03}")))
                    .collect()
            } else {
                Vec::new()
            };
            for acc in &accounts {
                ledger.create_account(acc.clone(), ac.attacker_balance)?;
                owners.insert(acc.clone(), Owner::Attack(a));
            }
            attacks.push(AttackState {
                accounts,
                own_uids: BTreeSet::new(),
                planned_accesses: 0,
                interactions: 0,
                feedbacks: 0,
                forged_submitted: 0,
                forged_rejected: 0,
                forged_accepted: 0,
            });
        }

        let mut providers = Vec::new();
        for pc in &cfg.providers {
            ledger.create_account(pc.address.clone(), PROVIDER_BALANCE)?;
            let p = TrustProvider::new(pc.clone());
            ledger.submit(p.registration())?;
            providers.push(p);
        }
        // catch up on the fixture prelude
        for p in &mut providers {
            for tx in p.ingest_chain(ledger.chain())? {
                let _ = ledger.submit(tx);
            }
        }

        let mut honest_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        honest_rng.set_stream(0);
        let mut attack_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        attack_rng.set_stream(1);

        Ok(Engine {
            cfg,
            ledger,
            providers,
            honest_rng,
            attack_rng,
            users,
            owners,
            attacks,
            to_review: Vec::new(),
            offset,
            blocks: Vec::new(),
            scores: Vec::new(),
            services,
        })
    }

    fn max_rating(&self) -> u8 {
        self.ledger.config().contracts.max_rating
    }

    /// True quality of `service` at `step`, after service-side attacks.
    fn quality_at(&self, service: &Service, step: u64) -> f64 {
        let Some(sc) = self.cfg.services.iter().find(|s| s.name == service.0.as_str()) else {
            return 1.0;
        };
        let mut q = sc.quality;
        for a in &self.cfg.attacks {
            if a.target != sc.name || step < a.start_block {
                continue;
            }
            match a.kind {
                // bad for `period` blocks, then good for `period`, repeating
                AttackKind::OnOff if a.is_active(step, self.cfg.duration_blocks) => {
                    if ((step - a.start_block) / a.period).is_multiple_of(2) {
                        q = 0.0;
                    }
                }
                AttackKind::Opportunistic => q = 0.0,
                _ => {}
            }
        }
        q
    }

    fn price(&self, service: &str) -> u64 {
        self.cfg
            .services
            .iter()
            .find(|s| s.name == service)
            .map(|s| s.price)
            .unwrap_or(0)
    }

    fn step(&mut self, step: u64) -> Result<(), SimError> {
        self.submit_reviews();
        self.submit_honest_accesses();
        self.submit_attacks(step);

        let depth = self.ledger.pending_len();
        let gas_price = self.ledger.gas_price(depth);
        let block = self.ledger.produce_next_block();
        self.observe(&block, step);
        self.blocks.push(BlockMetrics {
            block: block.number,
            timestamp: block.timestamp,
            tx_count: block.transactions.len(),
            reverted: block.transactions.iter().filter(|t| !t.status.is_success()).count(),
            interactions: count_kind(&block, |p| matches!(p, EventPayload::Interaction { .. })),
            feedbacks: count_kind(&block, |p| matches!(p, EventPayload::Feedback { .. })),
            gas_used: block.gas_used,
            gas_price,
            pending_depth: self.ledger.pending_len(),
            tps: block.transactions.len() as f64 / self.ledger.config().block_interval as f64,
        });

        for p in &mut self.providers {
            for tx in p.ingest_block(&block)? {
                // an unfunded provider simply stops publishing
                let _ = self.ledger.submit(tx);
            }
            for svc in &self.services {
                self.scores.push(ScoreRow {
                    block: block.number,
                    provider: p.address().to_string(),
                    service: svc.to_string(),
                    score: p.answer_query(svc, &Context::All),
                });
            }
        }
        Ok(())
    }

    fn submit_reviews(&mut self) {
        let r_max = self.max_rating();
        let queue = std::mem::take(&mut self.to_review);
        for (uid, user, service, step) in queue {
            let rating = match self.owners.get(&user) {
                Some(Owner::Honest) => {
                    let q = self.quality_at(&service, step);
                    if self.honest_rng.gen_bool(q) {
                        r_max
                    } else {
                        0
                    }
                }
                Some(Owner::Attack(a)) => match self.cfg.attacks[*a].kind {
                    AttackKind::GoodMouthing => r_max,
                    _ => 0,
                },
                None => continue,
            };
            let _ = self.ledger.submit(Transaction::review(user, uid, rating as i64));
        }
    }

    fn submit_honest_accesses(&mut self) {
        if self.cfg.services.is_empty() {
            return;
        }
        let rate = self.cfg.users.interaction_rate;
        let whole = rate.floor() as u64;
        let frac = rate - rate.floor();
        for k in 0..self.users.len() {
            let n = whole + self.honest_rng.gen_bool(frac) as u64;
            for _ in 0..n {
                let s = &self.cfg.services[self.honest_rng.gen_range(0..self.cfg.services.len())];
                let user = self.users[k].clone();
                if !self.providers.is_empty() && self.honest_rng.gen_bool(self.cfg.users.query_rate) {
                    let p = &self.providers[self.honest_rng.gen_range(0..self.providers.len())];
                    let _ = self.ledger.submit(Transaction::score_query(
                        user.clone(),
                        p.address().clone(),
                        s.name.as_str(),
                        p.config().fee,
                    ));
                }
                let _ = self.ledger.submit(Transaction::access(user, s.name.as_str(), s.price));
            }
        }
    }

    fn submit_attacks(&mut self, step: u64) {
        let duration = self.cfg.duration_blocks;
        let known_uids = self.ledger.contracts().feedback_state().valid_interactions.len() as u64;
        for (a, ac) in self.cfg.attacks.iter().enumerate() {
            if !ac.kind.uses_accounts() || !ac.is_active(step, duration) {
                continue;
            }
            let (accesses, forges) = match ac.kind {
                AttackKind::Sybil if step == ac.start_block => (ac.intensity, ac.forge_attempts),
                AttackKind::Sybil => (0, 0),
                _ => (ac.intensity, ac.forge_attempts),
            };
            let price = self.price(&ac.target);
            for acc in self.attacks[a].accounts.clone() {
                for _ in 0..accesses {
                    if self
                        .ledger
                        .submit(Transaction::access(acc.clone(), ac.target.as_str(), price))
                        .is_ok()
                    {
                        self.attacks[a].planned_accesses += 1;
                    }
                }
                for f in 0..forges {
                    // alternate: someone else's interaction, then one that does not exist
                    let uid = if f % 2 == 0 && known_uids > 0 {
                        self.attack_rng.gen_range(1..=known_uids)
                    } else {
                        known_uids + 1_000_000 + self.attack_rng.gen_range(0..1_000_000)
                    };
                    if self.attacks[a].own_uids.contains(&uid) {
                        continue;
                    }
                    if self.ledger.submit(Transaction::review(acc.clone(), uid, 0)).is_ok() {
                        self.attacks[a].forged_submitted += 1;
                    }
                }
            }
        }
    }

    fn observe(&mut self, block: &Block, step: u64) {
        for ev in &block.events {
            if let EventPayload::Interaction { user, resource, uid } = &ev.payload {
                if let Some(Owner::Attack(a)) = self.owners.get(user) {
                    self.attacks[*a].own_uids.insert(*uid);
                    self.attacks[*a].interactions += 1;
                }
                self.to_review
                    .push((*uid, user.clone(), Service(resource.clone()), step));
            }
        }
        for t in &block.transactions {
            let (Some(Owner::Attack(a)), TxPayload::ReviewSubmission { uid, .. }) =
                (self.owners.get(&t.tx.sender), &t.tx.payload)
            else {
                continue;
            };
            let st = &mut self.attacks[*a];
            if st.own_uids.contains(uid) {
                st.feedbacks += t.status.is_success() as u64;
            } else if t.status.is_success() {
                st.forged_accepted += 1;
            } else {
                st.forged_rejected += 1;
            }
        }
    }

    fn finish(self) -> RunOutput {
        let cfg = self.cfg;
        let chain = self.ledger.chain();
        let evidence = build_evidence_map(chain.events()).expect("ledger emits a consistent evidence map");
        let rho = RatingProjection::default();
        let d = &cfg.detectors;
        let head = self.ledger.head().number;
        let mut detections = detect_spike(&evidence, &rho, head, d.spike_window, d.spike_threshold).unwrap_or_default();
        detections.extend(detect_serial_negative(&evidence, &rho, d.serial_k));
        detections.extend(detect_short_lived(&evidence, d.min_lifetime_blocks));

        let base_price = self.ledger.config().base_price;
        let min_fee = (gas::ACCESS_REQUEST + gas::REVIEW_SUBMISSION) as u128 * base_price as u128;
        let attacks = cfg
            .attacks
            .iter()
            .zip(&self.attacks)
            .map(|(ac, st)| {
                let start = self.offset + ac.start_block;
                let end = self.offset + ac.end(cfg.duration_blocks);
                let names: BTreeSet<String> = st.accounts.iter().map(|a| a.to_string()).collect();
                let cost = st
                    .accounts
                    .iter()
                    .map(|a| ac.attacker_balance.saturating_sub(self.ledger.balance(a).unwrap_or(0)) as u128)
                    .sum();
                let relevant = detections
                    .iter()
                    .filter(|r| match r.kind {
                        DetectionKind::FeedbackSpike => {
                            r.subject == ac.target && r.window.0 < end && r.window.1 >= start
                        }
                        DetectionKind::ShortLivedAccount => names.contains(&r.subject),
                        DetectionKind::SerialNegative => {
                            r.subject.split_once('@').is_some_and(|(who, _)| names.contains(who))
                        }
                    })
                    .cloned()
                    .collect();
                AttackMetrics {
                    kind: format!("{:?}", ac.kind),
                    target: ac.target.clone(),
                    start_block: start,
                    end_block: end,
                    accounts: names.into_iter().collect(),
                    cost,
                    min_cost: st.planned_accesses as u128 * (self.price(&ac.target) as u128 + min_fee),
                    planned_accesses: st.planned_accesses,
                    interactions: st.interactions,
                    feedbacks: st.feedbacks,
                    forged_submitted: st.forged_submitted,
                    forged_rejected: st.forged_rejected,
                    forged_accepted: st.forged_accepted,
                    displacement: BTreeMap::new(),
                    detections: relevant,
                }
            })
            .collect();

        let mut final_scores: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for p in &self.providers {
            let row = final_scores.entry(p.address().to_string()).or_default();
            for s in &self.services {
                row.insert(s.to_string(), p.answer_query(s, &Context::All));
            }
        }
        let summary = RunSummary {
            name: cfg.name.clone(),
            seed: cfg.seed,
            blocks: head,
            head_hash: self.ledger.head().hash.to_hex(),
            chain_valid: self.ledger.verify_chain().is_ok(),
            unbacked_feedbacks: scan_unbacked_feedback(chain).len(),
            cache_provenance: cache_provenance_holds(self.ledger.contracts(), chain),
            total_transactions: chain.blocks().iter().map(|b| b.transactions.len()).sum(),
            total_interactions: evidence.interactions().count(),
            total_feedbacks: evidence.feedback_ids().count(),
            dropped_transactions: self.ledger.dropped().len(),
            final_scores,
        };
        RunOutput {
            metrics: MetricsBundle {
                summary,
                blocks: self.blocks,
                scores: self.scores,
                attacks,
                detections,
            },
            ledger: self.ledger,
            providers: self.providers,
        }
    }
}

fn count_kind(block: &Block, f: impl Fn(&EventPayload) -> bool) -> usize {
    block.events.iter().filter(|e| f(&e.payload)).count()
}
