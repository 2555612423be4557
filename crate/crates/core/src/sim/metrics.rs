use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::providers::DetectionReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMetrics {
    pub block: u64,
    pub timestamp: u64,
    pub tx_count: usize,
    pub reverted: usize,
    pub interactions: usize,
    pub feedbacks: usize,
    pub gas_used: u64,
    pub gas_price: u64,
    /// Pool size left after the block was sealed.
    pub pending_depth: usize,
    /// Transactions per simulated second over the block interval.
    pub tps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub block: u64,
    pub provider: String,
    pub service: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub kind: String,
    pub target: String,
    /// Inclusive first and exclusive last block.
    pub start_block: u64,
    pub end_block: u64,
    pub accounts: Vec<String>,
    /// Tokens the attacking accounts spent, from ledger balances.
    pub cost: u128,
    /// Planned accesses × (price + minimum access and review fees).
    pub min_cost: u128,
    pub planned_accesses: u64,
    pub interactions: u64,
    pub feedbacks: u64,
    pub forged_submitted: u64,
    pub forged_rejected: u64,
    pub forged_accepted: u64,
    /// Per provider: max over blocks of |score − baseline score| on the target.
    pub displacement: BTreeMap<String, f64>,
    pub detections: Vec<DetectionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub blocks: u64,
    pub head_hash: String,
    pub chain_valid: bool,
    pub unbacked_feedbacks: usize,
    pub cache_provenance: bool,
    pub total_transactions: usize,
    pub total_interactions: usize,
    pub total_feedbacks: usize,
    pub dropped_transactions: usize,
    /// provider → service → final score.
    pub final_scores: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub summary: RunSummary,
    pub blocks: Vec<BlockMetrics>,
    pub scores: Vec<ScoreRow>,
    pub attacks: Vec<AttackMetrics>,
    pub detections: Vec<DetectionReport>,
}

fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

impl MetricsBundle {
    /// Per-block table.
    pub fn blocks_csv(&self) -> String {
        to_csv(&self.blocks)
    }

    /// Score trajectories: one row per block, provider and service.
    pub fn scores_csv(&self) -> String {
        to_csv(&self.scores)
    }

    /// Summary, attack outcomes and detections as pretty JSON.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            summary: &'a RunSummary,
            attacks: &'a [AttackMetrics],
            detections: &'a [DetectionReport],
        }
        serde_json::to_string_pretty(&View {
            summary: &self.summary,
            attacks: &self.attacks,
            detections: &self.detections,
        })
        .expect("plain data serialises")
    }

    /// Writes `metrics.csv`, `scores.csv` and `summary.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), self.blocks_csv())?;
        std::fs::write(dir.join("scores.csv"), self.scores_csv())?;
        std::fs::write(dir.join("summary.json"), self.summary_json())?;
        Ok(())
    }

    /// Score trajectory of one provider for one service, indexed by block.
    pub fn trajectory(&self, provider: &str, service: &str) -> Vec<(u64, f64)> {
        self.scores
            .iter()
            .filter(|r| r.provider == provider && r.service == service)
            .map(|r| (r.block, r.score))
            .collect()
    }
}
