//! Scenario configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! duration_blocks = 60
//!
//! [users]
//! count = 20
//! interaction_rate = 0.5   # expected accesses per user per block
//!
//! [[services]]
//! name = "printer"
//! quality = 0.9
//! price = 1000
//!
//! [[providers]]
//! address = "tp-uniform"
//! mechanism = "average"
//! selection = "uniform"
//! recompute = "every-block"
//!
//! [[attacks]]
//! kind = "sybil"
//! target = "printer"
//! start_block = 20
//! attackers = 20
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::LedgerConfig;
use crate::providers::{DetectorConfig, TrustProviderConfig};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "TRUSTLEDGER_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_blocks: u64,
    /// Fixture replayed on the ledger before the scenario starts.
    #[serde(default)]
    pub fixture: Option<String>,
    #[serde(default)]
    pub ledger: LedgerConfig,
    #[serde(default)]
    pub users: UserConfig,
    #[serde(default)]
    pub services: Vec<ServiceConfig>,
    #[serde(default)]
    pub providers: Vec<TrustProviderConfig>,
    #[serde(default)]
    pub attacks: Vec<AttackConfig>,
    /// Detectors run over the final chain for the metrics report.
    #[serde(default)]
    pub detectors: DetectorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserConfig {
    pub count: u32,
    /// Expected accesses per user per block.
    pub interaction_rate: f64,
    /// Probability that an access is preceded by a paid score query.
    pub query_rate: f64,
    pub balance: u64,
}

impl Default for UserConfig {
    fn default() -> Self {
        UserConfig {
            count: 0,
            interaction_rate: 0.0,
            query_rate: 0.0,
            balance: 10_000_000_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub name: String,
    pub quality: f64,
    #[serde(default)]
    pub price: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    BadMouthing,
    GoodMouthing,
    Collusion,
    Sybil,
    OnOff,
    Opportunistic,
}

impl AttackKind {
    /// Whether the attack is carried out by feedback-submitting accounts (as
    /// opposed to the service changing its own behaviour).
    pub fn uses_accounts(self) -> bool {
        !matches!(self, AttackKind::OnOff | AttackKind::Opportunistic)
    }
}

fn one() -> u32 {
    1
}
fn default_period() -> u64 {
    5
}
fn default_attacker_balance() -> u64 {
    1_000_000_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub target: String,
    pub start_block: u64,
    /// Exclusive end, capped at the last block so the final accesses still
    /// get reviewed. Defaults to that cap.
    #[serde(default)]
    pub end_block: Option<u64>,
    /// Accesses (each followed by a feedback) per attacker per block. Sybil
    /// clones act once, with this many feedbacks each.
    #[serde(default = "one")]
    pub intensity: u32,
    /// Colluding accounts or sybil clones.
    #[serde(default = "one", alias = "clones")]
    pub attackers: u32,
    /// Half-period of an on-off attack, in blocks.
    #[serde(default = "default_period")]
    pub period: u64,
    /// Reviews per attacker per block aimed at interactions the attacker
    /// does not own or that do not exist.
    #[serde(default)]
    pub forge_attempts: u32,
    #[serde(default = "default_attacker_balance")]
    pub attacker_balance: u64,
}

impl AttackConfig {
    pub fn end(&self, duration: u64) -> u64 {
        self.end_block.unwrap_or(duration).min(duration)
    }

    pub fn is_active(&self, block: u64, duration: u64) -> bool {
        block >= self.start_block && block < self.end(duration)
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: ScenarioConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Applies `TRUSTLEDGER_SEED` when set. A malformed value is an error.
    pub fn apply_env_seed(&mut self) -> Result<(), ConfigError> {
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                self.seed = v
                    .trim()
                    .parse()
                    .map_err(|_| ConfigError::Invalid(format!("{SEED_ENV}={v:?} is not an integer")))?;
                Ok(())
            }
            Err(_) => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        let u = &self.users;
        if !(u.interaction_rate.is_finite() && u.interaction_rate >= 0.0) {
            return bad(format!("interaction_rate {} must be non-negative", u.interaction_rate));
        }
        if !(0.0..=1.0).contains(&u.query_rate) {
            return bad(format!("query_rate {} outside [0, 1]", u.query_rate));
        }
        let mut names = BTreeSet::new();
        for s in &self.services {
            if !(0.0..=1.0).contains(&s.quality) {
                return bad(format!("service {} quality {} outside [0, 1]", s.name, s.quality));
            }
            if s.name.is_empty() || !names.insert(s.name.as_str()) {
                return bad(format!("service name {:?} empty or repeated", s.name));
            }
        }
        let mut addrs = BTreeSet::new();
        for p in &self.providers {
            if !addrs.insert(p.address.as_str()) {
                return bad(format!("provider {} listed twice", p.address));
            }
            if !(0.0..=1.0).contains(&p.empty_value) {
                return bad(format!("provider {} empty_value outside [0, 1]", p.address));
            }
        }
        if self.ledger.block_interval == 0 {
            return bad("block_interval must be positive".into());
        }
        for a in &self.attacks {
            if a.start_block >= self.duration_blocks {
                return bad(format!(
                    "attack on {} starts at {} but the run has {} blocks",
                    a.target, a.start_block, self.duration_blocks
                ));
            }
            if a.end_block.is_some_and(|e| e <= a.start_block) {
                return bad(format!("attack on {} ends before it starts", a.target));
            }
            if !names.contains(a.target.as_str()) {
                return bad(format!("attack target {} is not a configured service", a.target));
            }
            if a.period == 0 || a.attackers == 0 {
                return bad("attack period and attackers must be positive".into());
            }
        }
        Ok(())
    }
}
