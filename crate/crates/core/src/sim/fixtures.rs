//! Small hand-built chains.
//!
//! * `fig2` / `worked-example`: three users, services `y1` (two
//!   interactions) and `y3` (one). The first interaction receives a
//!   negative then a positive feedback, the other two one positive each; a
//!   review citing a non-existent interaction is rejected on the way.
//! * `alternating-stream[:N]`: `N` interactions on one service (default 10)
//!   with feedbacks alternating positive, negative, positive, ...

use thiserror::Error;

use crate::contracts::ContractError;
use crate::ledger::{Chain, Ledger, LedgerConfig, LedgerError, Transaction, TxStatus};

pub const FIXTURE_NAMES: &[&str] = &["fig2", "worked-example", "alternating-stream"];
pub const DEFAULT_STREAM_LEN: usize = 10;

/// Balance minted for every fixture account.
const FIXTURE_BALANCE: u64 = 1 << 60;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("unknown fixture {0:?}; known: fig2, worked-example, alternating-stream[:N]")]
    UnknownFixture(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// What a fixture put on the ledger.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FixtureInfo {
    pub name: String,
    pub interactions: usize,
    pub feedbacks: usize,
    /// Review submissions that were reverted.
    pub rejected_reviews: usize,
    pub services: Vec<String>,
}

fn parse_name(name: &str) -> Result<(&str, usize), FixtureError> {
    let unknown = || FixtureError::UnknownFixture(name.to_owned());
    match name.split_once(':') {
        None if FIXTURE_NAMES.contains(&name) => Ok((name, DEFAULT_STREAM_LEN)),
        Some(("alternating-stream", n)) => n
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .map(|n| ("alternating-stream", n))
            .ok_or_else(unknown),
        _ => Err(unknown()),
    }
}

fn drain(ledger: &mut Ledger) {
    while ledger.pending_len() > 0 {
        ledger.produce_next_block();
    }
}

/// Replays the fixture on an existing ledger, creating the accounts and
/// resources it needs.
pub fn apply_fixture(ledger: &mut Ledger, name: &str) -> Result<FixtureInfo, FixtureError> {
    let (base, n) = parse_name(name)?;
    let start = ledger.chain().len();
    match base {
        "fig2" | "worked-example" => {
            for who in ["u1", "u2", "u3", "owner-y1", "owner-y3"] {
                ledger.create_account(who, FIXTURE_BALANCE)?;
            }
            ledger.register_resource("y1", "owner-y1", 10)?;
            ledger.register_resource("y3", "owner-y3", 10)?;
            let uid0 = ledger.contracts().feedback_state().valid_interactions.len() as u64;
            for (who, res) in [("u1", "y1"), ("u2", "y1"), ("u3", "y3")] {
                ledger.submit(Transaction::access(who, res, 10))?;
            }
            ledger.produce_next_block();
            let uid = |k: u64| uid0 + k;
            ledger.submit(Transaction::review("u1", uid(1), 0))?;
            ledger.submit(Transaction::review("u2", uid(2), 4))?;
            ledger.submit(Transaction::review("u3", uid(3), 3))?;
            ledger.submit(Transaction::review("u3", uid(3) + 1_000_000, 1))?;
            ledger.produce_next_block();
            ledger.submit(Transaction::review("u1", uid(1), 5))?;
            ledger.produce_next_block();
        }
        "alternating-stream" => {
            ledger.create_account("u", FIXTURE_BALANCE)?;
            ledger.create_account("owner-stream", 0)?;
            ledger.register_resource("stream", "owner-stream", 1)?;
            let uid0 = ledger.contracts().feedback_state().valid_interactions.len() as u64;
            for _ in 0..n {
                ledger.submit(Transaction::access("u", "stream", 1))?;
            }
            drain(ledger);
            for k in 0..n as u64 {
                let rating = if k % 2 == 0 { 5 } else { 0 };
                ledger.submit(Transaction::review("u", uid0 + k + 1, rating))?;
            }
            drain(ledger);
        }
        _ => unreachable!("parse_name filters"),
    }
    Ok(summarise(ledger.chain(), start, name))
}

fn summarise(chain: &Chain, from: usize, name: &str) -> FixtureInfo {
    let mut info = FixtureInfo {
        name: name.to_owned(),
        ..Default::default()
    };
    let mut services = std::collections::BTreeSet::new();
    for b in &chain.blocks()[from..] {
        for ev in &b.events {
            match &ev.payload {
                crate::ledger::EventPayload::Interaction { resource, .. } => {
                    info.interactions += 1;
                    services.insert(resource.to_string());
                }
                crate::ledger::EventPayload::Feedback { .. } => info.feedbacks += 1,
                _ => {}
            }
        }
        info.rejected_reviews += b
            .transactions
            .iter()
            .filter(|t| {
                matches!(
                    t.status,
                    TxStatus::Reverted(
                        ContractError::NoSuchInteraction { .. }
                            | ContractError::SubmitterMismatch { .. }
                            | ContractError::RatingOutOfRange { .. }
                    )
                )
            })
            .count();
    }
    info.services = services.into_iter().collect();
    info
}

/// Builds the named fixture on a fresh default ledger.
pub fn replay_fixture(name: &str) -> Result<(Ledger, FixtureInfo), FixtureError> {
    let mut ledger = Ledger::new(LedgerConfig::default());
    let info = apply_fixture(&mut ledger, name)?;
    Ok((ledger, info))
}
