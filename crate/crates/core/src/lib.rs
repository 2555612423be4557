//! Evidence-based trust scoring on a simulated append-only ledger.
//!
//! Interactions (paid resource accesses) and feedbacks (reviews linked to an
//! interaction) are recorded as events on a hash-chained ledger. Trust
//! providers read those events, build the evidence map and score services
//! with a pluggable scoring mechanism and evidence selection.
//!
//! Layout:
//!
//! - [`ledger`]: blocks, transactions, gas, event queries, dump/restore.
//! - [`contracts`]: resource access, feedback validation, provider registry.
//! - [`evidence`]: evidence map, service projection and feedback traces.
//! - [`selection`]: evidence selections (deterministic, uniform, fresh-biased, geometric).
//! - [`scoring`]: scoring mechanisms and recommendation scores.
//! - [`providers`]: trust-provider agents and attack detectors.
//! - [`sim`]: seeded scenarios, attack injection, fixtures and the throughput bench.
//! - `cli`: the `trustledger` command line (feature `cli`, on by default).

#[cfg(feature = "cli")]
pub mod cli;
pub mod contracts;
pub mod evidence;
pub mod ledger;
pub mod providers;
pub mod scoring;
pub mod selection;
pub mod sim;
mod types;

pub use types::{Address, LogicalTime, Service};
