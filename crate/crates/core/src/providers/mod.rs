//! Trust providers: agents that follow the chain, keep an evidence map,
//! score services with their own (μ, ω) and push cached scores on-chain.

pub mod detect;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{EvidenceError, EvidenceMap, InteractionSet};
use crate::ledger::{Block, Chain, EventPayload, Transaction};
use crate::scoring::{
    sigma_service_linear, Context, Mechanism, RatingProjection, ScoringMechanism, DEFAULT_EMPTY_VALUE,
    DEFAULT_RATING_THRESHOLD,
};
use crate::selection::EvidenceSelection;
use crate::{Address, Service};

pub use detect::{
    detect_serial_negative, detect_short_lived, detect_spike, DetectError, DetectionKind, DetectionReport,
    DetectorConfig,
};

pub const DEFAULT_SCORE_EPSILON: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RecomputePolicy {
    #[default]
    EveryBlock,
    EveryNBlocks(u64),
    OnDemand,
}

impl fmt::Display for RecomputePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecomputePolicy::EveryBlock => f.write_str("every-block"),
            RecomputePolicy::EveryNBlocks(n) => write!(f, "every-n-blocks:{n}"),
            RecomputePolicy::OnDemand => f.write_str("on-demand"),
        }
    }
}

impl FromStr for RecomputePolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "every-block" => Ok(RecomputePolicy::EveryBlock),
            "on-demand" => Ok(RecomputePolicy::OnDemand),
            other => other
                .strip_prefix("every-n-blocks:")
                .and_then(|n| n.trim().parse().ok())
                .filter(|n| *n > 0)
                .map(RecomputePolicy::EveryNBlocks)
                .ok_or_else(|| format!("unrecognised recompute policy {other:?}")),
        }
    }
}

impl TryFrom<String> for RecomputePolicy {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<RecomputePolicy> for String {
    fn from(p: RecomputePolicy) -> String {
        p.to_string()
    }
}

fn default_epsilon() -> f64 {
    DEFAULT_SCORE_EPSILON
}
fn default_empty() -> f64 {
    DEFAULT_EMPTY_VALUE
}
fn default_threshold() -> u8 {
    DEFAULT_RATING_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustProviderConfig {
    pub address: Address,
    #[serde(default)]
    pub fee: u64,
    pub mechanism: Mechanism,
    pub selection: EvidenceSelection,
    #[serde(default)]
    pub recompute: RecomputePolicy,
    #[serde(default = "default_epsilon")]
    pub score_epsilon: f64,
    #[serde(default = "default_empty")]
    pub empty_value: f64,
    #[serde(default = "default_threshold")]
    pub rating_threshold: u8,
    #[serde(default)]
    pub detectors: DetectorConfig,
    /// Drop interactions of accounts flagged as short-lived, and of
    /// serial-negative (user, service) pairs, before scoring.
    #[serde(default)]
    pub exclude_flagged: bool,
}

impl TrustProviderConfig {
    pub fn new(address: impl Into<Address>, mechanism: Mechanism, selection: EvidenceSelection) -> Self {
        TrustProviderConfig {
            address: address.into(),
            fee: 0,
            mechanism,
            selection,
            recompute: RecomputePolicy::default(),
            score_epsilon: DEFAULT_SCORE_EPSILON,
            empty_value: DEFAULT_EMPTY_VALUE,
            rating_threshold: DEFAULT_RATING_THRESHOLD,
            detectors: DetectorConfig::default(),
            exclude_flagged: false,
        }
    }

    pub fn scoring(&self) -> ScoringMechanism {
        ScoringMechanism::new(self.mechanism)
            .with_empty_value(self.empty_value)
            .with_rho(RatingProjection::new(self.rating_threshold))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("expected block {expected}, got block {got}")]
    OutOfOrderBlock { expected: u64, got: u64 },
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
}

/// One recomputed score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePoint {
    pub block: u64,
    pub service: Service,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct TrustProvider {
    config: TrustProviderConfig,
    evidence: EvidenceMap,
    next_block: u64,
    /// Latest computed score per service.
    current: BTreeMap<Service, f64>,
    /// Last score pushed on-chain per service.
    pushed: BTreeMap<Service, f64>,
    dirty: BTreeSet<Service>,
    history: Vec<ScorePoint>,
    recomputes: Vec<u64>,
}

impl TrustProvider {
    pub fn new(config: TrustProviderConfig) -> Self {
        TrustProvider {
            config,
            evidence: EvidenceMap::new(),
            next_block: 0,
            current: BTreeMap::new(),
            pushed: BTreeMap::new(),
            dirty: BTreeSet::new(),
            history: Vec::new(),
            recomputes: Vec::new(),
        }
    }

    pub fn config(&self) -> &TrustProviderConfig {
        &self.config
    }

    pub fn address(&self) -> &Address {
        &self.config.address
    }

    pub fn evidence(&self) -> &EvidenceMap {
        &self.evidence
    }

    /// Number of the last block ingested.
    pub fn head(&self) -> Option<u64> {
        self.next_block.checked_sub(1)
    }

    /// Every score computed so far, in order.
    pub fn history(&self) -> &[ScorePoint] {
        &self.history
    }

    /// Blocks at which a recompute ran.
    pub fn recompute_blocks(&self) -> &[u64] {
        &self.recomputes
    }

    pub fn cached_score(&self, service: &Service) -> Option<f64> {
        self.current.get(service).copied()
    }

    /// The transaction that registers this provider on-chain.
    pub fn registration(&self) -> Transaction {
        Transaction::register_provider(self.config.address.clone(), self.config.fee, self.config.empty_value)
    }

    /// Consumes the next block. Returns the score updates to submit.
    pub fn ingest_block(&mut self, block: &Block) -> Result<Vec<Transaction>, ProviderError> {
        if block.number != self.next_block {
            return Err(ProviderError::OutOfOrderBlock {
                expected: self.next_block,
                got: block.number,
            });
        }
        for ev in &block.events {
            let touched = self.evidence.ingest_event(ev)?;
            if let (EventPayload::Feedback { .. }, Some(svc)) = (&ev.payload, touched) {
                self.dirty.insert(svc);
            }
        }
        self.next_block += 1;

        let due = match self.config.recompute {
            RecomputePolicy::EveryBlock => true,
            RecomputePolicy::EveryNBlocks(n) => block.number > 0 && block.number.is_multiple_of(n),
            RecomputePolicy::OnDemand => false,
        };
        if !due || self.dirty.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.recompute(block.number))
    }

    /// Ingests every block of `chain` not yet seen.
    pub fn ingest_chain(&mut self, chain: &Chain) -> Result<Vec<Transaction>, ProviderError> {
        let mut out = Vec::new();
        for b in chain.blocks().iter().skip(self.next_block as usize) {
            out.extend(self.ingest_block(b)?);
        }
        Ok(out)
    }

    fn recompute(&mut self, block: u64) -> Vec<Transaction> {
        self.recomputes.push(block);
        let services: Vec<Service> = if self.config.exclude_flagged {
            // flags can change without new feedback for a service
            self.evidence.services().cloned().collect()
        } else {
            std::mem::take(&mut self.dirty).into_iter().collect()
        };
        self.dirty.clear();
        let excluded = self.excluded();
        let mut txs = Vec::new();
        for svc in services {
            let score = self.score_now(&svc, &Context::All, &excluded);
            self.current.insert(svc.clone(), score);
            self.history.push(ScorePoint {
                block,
                service: svc.clone(),
                score,
            });
            let changed = self
                .pushed
                .get(&svc)
                .is_none_or(|old| (score - old).abs() > self.config.score_epsilon);
            if changed {
                self.pushed.insert(svc.clone(), score);
                txs.push(Transaction::score_update(self.config.address.clone(), svc, score));
            }
        }
        txs
    }

    /// Interactions left out of scoring when `exclude_flagged` is set.
    fn excluded(&self) -> InteractionSet {
        if !self.config.exclude_flagged {
            return InteractionSet::new();
        }
        let d = &self.config.detectors;
        let rho = RatingProjection::new(self.config.rating_threshold);
        let short: BTreeSet<String> = detect_short_lived(&self.evidence, d.min_lifetime_blocks)
            .into_iter()
            .map(|r| r.subject)
            .collect();
        let serial: BTreeSet<String> = detect_serial_negative(&self.evidence, &rho, d.serial_k)
            .into_iter()
            .map(|r| r.subject)
            .collect();
        self.evidence
            .interactions()
            .filter(|i| short.contains(i.user.as_str()) || serial.contains(&format!("{}@{}", i.user, i.service)))
            .map(|i| i.uid)
            .collect()
    }

    fn score_now(&self, svc: &Service, ctx: &Context, excluded: &InteractionSet) -> f64 {
        let Some(all) = self.evidence.interactions_of(svc) else {
            return self.config.empty_value;
        };
        let mut set: InteractionSet = match ctx {
            Context::All => all.clone(),
            Context::Set(u) => all.intersection(u).copied().collect(),
        };
        set.retain(|u| !excluded.contains(u));
        sigma_service_linear(
            &self.evidence,
            svc,
            &Context::Set(set),
            &self.config.scoring(),
            &self.config.selection,
        )
        .map(|r| r.value)
        .unwrap_or(self.config.empty_value)
    }

    /// σ(y|U) as this provider would answer it: the cached value for the
    /// whole-service context under a caching policy, otherwise computed now.
    pub fn answer_query(&self, service: &Service, ctx: &Context) -> f64 {
        if self.config.recompute != RecomputePolicy::OnDemand && *ctx == Context::All {
            if let Some(v) = self.current.get(service) {
                return *v;
            }
        }
        self.score_now(service, ctx, &self.excluded())
    }

    /// Runs every detector on the current evidence. The spike detector is
    /// skipped while history is too short.
    pub fn detect(&self) -> Vec<DetectionReport> {
        let d = &self.config.detectors;
        let rho = RatingProjection::new(self.config.rating_threshold);
        let head = self.head().unwrap_or(0);
        let mut out = detect_spike(&self.evidence, &rho, head, d.spike_window, d.spike_threshold).unwrap_or_default();
        out.extend(detect_serial_negative(&self.evidence, &rho, d.serial_k));
        out.extend(detect_short_lived(&self.evidence, d.min_lifetime_blocks));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{Ledger, LedgerConfig};

    fn setup() -> Ledger {
        let mut l = Ledger::new(LedgerConfig::default());
        l.create_account("owner", 0).unwrap();
        l.register_resource("s", "owner", 10).unwrap();
        for u in ["u1", "u2"] {
            l.create_account(u, u64::MAX / 4).unwrap();
        }
        l
    }

    fn avg_uniform(policy: RecomputePolicy) -> TrustProvider {
        let mut c = TrustProviderConfig::new("tp", Mechanism::Average, EvidenceSelection::Uniform);
        c.recompute = policy;
        TrustProvider::new(c)
    }

    #[test]
    fn policy_parse() {
        for s in ["every-block", "every-n-blocks:5", "on-demand"] {
            assert_eq!(s.parse::<RecomputePolicy>().unwrap().to_string(), s);
        }
        assert!("every-n-blocks:0".parse::<RecomputePolicy>().is_err());
        assert!("sometimes".parse::<RecomputePolicy>().is_err());
    }

    #[test]
    fn every_block_pushes_on_feedback() {
        let mut l = setup();
        let mut p = avg_uniform(RecomputePolicy::EveryBlock);
        l.submit(Transaction::access("u1", "s", 10)).unwrap();
        l.produce_next_block();
        assert!(p.ingest_chain(l.chain()).unwrap().is_empty());
        l.submit(Transaction::review("u1", 1, 5)).unwrap();
        l.produce_next_block();
        let txs = p.ingest_chain(l.chain()).unwrap();
        assert_eq!(txs.len(), 1);
        assert_eq!(p.answer_query(&"s".into(), &Context::All), 1.0);

        // empty block: nothing recomputed
        let before = p.recompute_blocks().len();
        l.produce_next_block();
        assert!(p.ingest_chain(l.chain()).unwrap().is_empty());
        assert_eq!(p.recompute_blocks().len(), before);

        // same score again: under epsilon, no push
        l.submit(Transaction::access("u2", "s", 10)).unwrap();
        l.produce_next_block();
        l.submit(Transaction::review("u2", 2, 4)).unwrap();
        l.produce_next_block();
        assert!(p.ingest_chain(l.chain()).unwrap().is_empty());
        assert_eq!(p.recompute_blocks().len(), before + 1);
    }

    #[test]
    fn every_n_blocks_schedule() {
        let mut l = setup();
        l.submit(Transaction::access("u1", "s", 10)).unwrap();
        l.produce_next_block();
        for k in 0..10 {
            l.submit(Transaction::review("u1", 1, if k % 2 == 0 { 5 } else { 0 }))
                .unwrap();
            l.produce_next_block();
        }
        let mut p = avg_uniform(RecomputePolicy::EveryNBlocks(5));
        p.ingest_chain(l.chain()).unwrap();
        assert_eq!(p.recompute_blocks(), &[5, 10]);
    }

    #[test]
    fn on_demand_and_unknown() {
        let mut l = setup();
        l.submit(Transaction::access("u1", "s", 10)).unwrap();
        l.produce_next_block();
        l.submit(Transaction::review("u1", 1, 0)).unwrap();
        l.produce_next_block();
        let mut p = avg_uniform(RecomputePolicy::OnDemand);
        assert!(p.ingest_chain(l.chain()).unwrap().is_empty());
        assert!(p.recompute_blocks().is_empty());
        assert_eq!(p.answer_query(&"s".into(), &Context::All), 0.0);
        assert_eq!(p.answer_query(&"nothing".into(), &Context::All), 0.5);
    }

    #[test]
    fn out_of_order_rejected() {
        let mut l = setup();
        l.produce_next_block();
        l.produce_next_block();
        let mut p = avg_uniform(RecomputePolicy::EveryBlock);
        let err = p.ingest_block(&l.chain().blocks()[2]).unwrap_err();
        assert_eq!(err, ProviderError::OutOfOrderBlock { expected: 0, got: 2 });
    }

    #[test]
    fn exclusion_drops_flagged_accounts() {
        let mut l = setup();
        // u1 honest and long-lived
        for b in 0..12 {
            l.submit(Transaction::access("u1", "s", 10)).unwrap();
            l.produce_next_block();
            l.submit(Transaction::review("u1", b + 1, 5)).unwrap();
        }
        l.produce_next_block();
        // u2 appears once and leaves a negative
        l.submit(Transaction::access("u2", "s", 10)).unwrap();
        l.produce_next_block();
        l.submit(Transaction::review("u2", 13, 0)).unwrap();
        l.produce_next_block();

        let mut plain = avg_uniform(RecomputePolicy::EveryBlock);
        plain.ingest_chain(l.chain()).unwrap();
        assert!((plain.answer_query(&"s".into(), &Context::All) - 12.0 / 13.0).abs() < 1e-12);

        let mut c = plain.config().clone();
        c.exclude_flagged = true;
        let mut filtered = TrustProvider::new(c);
        filtered.ingest_chain(l.chain()).unwrap();
        assert_eq!(filtered.answer_query(&"s".into(), &Context::All), 1.0);
        let reports = filtered.detect();
        assert!(reports
            .iter()
            .any(|r| r.kind == DetectionKind::ShortLivedAccount && r.subject == "u2"));
    }
}
