//! Throughput under the block model.
//!
//! For each workload a fresh ledger is set up, the whole batch is submitted
//! at once and blocks are produced at the target interval until the pool is
//! empty. All times are simulated seconds.

use serde::{Deserialize, Serialize};

use crate::ledger::{Ledger, LedgerConfig, Transaction, TxKind};

/// Accesses seeded before a review workload so every review has an
/// interaction to cite.
pub const PRESEEDED_ACCESSES: usize = 11_110;

pub const DEFAULT_WORKLOADS: &[usize] = &[10, 100, 1000, 10_000];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub workload: usize,
    /// Seconds from submission to inclusion of the last transaction.
    pub total_time: u64,
    pub tps: f64,
    pub blocks: u64,
    pub avg_tx_per_block: f64,
    pub avg_gas: f64,
    pub avg_fee: f64,
}

/// Parses a transaction kind as written on the command line.
pub fn parse_kind(s: &str) -> Option<TxKind> {
    Some(match s.trim().to_ascii_lowercase().as_str() {
        "access" | "accessrequest" => TxKind::AccessRequest,
        "review" | "feedback" | "reviewsubmission" => TxKind::ReviewSubmission,
        "query" | "scorequery" => TxKind::ScoreQuery,
        "update" | "scoreupdate" => TxKind::ScoreUpdate,
        "register" | "providerregistration" => TxKind::ProviderRegistration,
        "transfer" => TxKind::Transfer,
        _ => return None,
    })
}

const USER: &str = "bench-user";
const PROVIDER: &str = "bench-provider";
const RESOURCE: &str = "bench-resource";

fn setup(config: LedgerConfig, kind: TxKind) -> Ledger {
    let mut l = Ledger::new(config);
    for who in [USER, PROVIDER, "bench-owner", "bench-sink"] {
        l.create_account(who, u64::MAX / 8).expect("fresh ledger");
    }
    l.register_resource(RESOURCE, "bench-owner", 1).expect("owner exists");
    l.submit(Transaction::register_provider(PROVIDER, 1, 0.5))
        .expect("funded");
    l.produce_next_block();
    if kind == TxKind::ReviewSubmission {
        for _ in 0..PRESEEDED_ACCESSES {
            l.submit(Transaction::access(USER, RESOURCE, 1)).expect("funded");
        }
        while l.pending_len() > 0 {
            l.produce_next_block();
        }
    }
    l
}

fn workload_tx(kind: TxKind, k: usize) -> Transaction {
    match kind {
        TxKind::AccessRequest => Transaction::access(USER, RESOURCE, 1),
        TxKind::ReviewSubmission => Transaction::review(USER, (k % PRESEEDED_ACCESSES) as u64 + 1, (k % 6) as i64),
        TxKind::ScoreQuery => Transaction::score_query(USER, PROVIDER, RESOURCE, 1),
        TxKind::ScoreUpdate => Transaction::score_update(PROVIDER, RESOURCE, (k % 100) as f64 / 100.0),
        TxKind::ProviderRegistration => Transaction::register_provider(USER, k as u64, 0.5),
        TxKind::Transfer => Transaction::transfer(USER, "bench-sink", 1),
    }
}

/// Runs one workload on a fresh ledger.
pub fn bench_workload(workload: usize, kind: TxKind, config: LedgerConfig) -> BenchRow {
    let mut l = setup(config, kind);
    let t0 = l.head().timestamp;
    let b0 = l.head().number;
    for k in 0..workload {
        l.submit(workload_tx(kind, k)).expect("bench accounts are funded");
    }
    let (mut gas, mut fees, mut included) = (0u128, 0u128, 0usize);
    while l.pending_len() > 0 {
        let b = l.produce_next_block();
        for t in &b.transactions {
            gas += t.gas_used as u128;
            fees += t.fee as u128;
        }
        included += b.transactions.len();
    }
    let blocks = l.head().number - b0;
    let total_time = l.head().timestamp - t0;
    let per = |x: u128| if included == 0 { 0.0 } else { x as f64 / included as f64 };
    BenchRow {
        workload,
        total_time,
        tps: if total_time == 0 {
            0.0
        } else {
            workload as f64 / total_time as f64
        },
        blocks,
        avg_tx_per_block: if blocks == 0 {
            0.0
        } else {
            included as f64 / blocks as f64
        },
        avg_gas: per(gas),
        avg_fee: per(fees),
    }
}

pub fn bench_throughput(workloads: &[usize], kind: TxKind, config: LedgerConfig) -> Vec<BenchRow> {
    workloads.iter().map(|w| bench_workload(*w, kind, config)).collect()
}
