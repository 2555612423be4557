//! Evidence selections: per-interaction probability weights over that
//! interaction's feedbacks.
//!
//! Feedbacks of an interaction are ranked by logical time, rank 0 being the
//! oldest. For `N` feedbacks and ratio `q ∈ (0, 1)`:
//!
//! | selection     | weight of rank `k`                 |
//! |---------------|------------------------------------|
//! | deterministic | 1 if `k = N-1` (newest), else 0    |
//! | uniform       | `1/N`                              |
//! | fresh(q)      | `q^(N-1-k) (1-q) / (1-q^N)`        |
//! | geometric(q)  | `q^k (1-q) / (1-q^N)`              |
//!
//! Every row sums to one over `k = 0..N`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{EvidenceMap, FeedbackTrace, InteractionSet, ReviewId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectionError {
    #[error("ratio q = {0} outside the open interval (0, 1)")]
    InvalidRatio(String),
    #[error("review {review:?} is not a feedback of interaction {uid}")]
    NotAFeedbackOfInteraction { uid: u64, review: ReviewId },
    #[error("unrecognised selection {0:?}; expected deterministic, uniform, fresh(q) or geometric(q)")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EvidenceSelection {
    Deterministic,
    Uniform,
    FreshBiased { q: f64 },
    Geometric { q: f64 },
}

fn check_ratio(q: f64) -> Result<f64, SelectionError> {
    if q > 0.0 && q < 1.0 {
        Ok(q)
    } else {
        Err(SelectionError::InvalidRatio(q.to_string()))
    }
}

impl EvidenceSelection {
    pub fn fresh_biased(q: f64) -> Result<Self, SelectionError> {
        check_ratio(q).map(|q| EvidenceSelection::FreshBiased { q })
    }

    pub fn geometric(q: f64) -> Result<Self, SelectionError> {
        check_ratio(q).map(|q| EvidenceSelection::Geometric { q })
    }

    /// Weight of the rank-`k` feedback among `n`. Zero when `k >= n`.
    pub fn rank_weight(&self, k: usize, n: usize) -> f64 {
        if k >= n {
            return 0.0;
        }
        match *self {
            EvidenceSelection::Deterministic => {
                if k == n - 1 {
                    1.0
                } else {
                    0.0
                }
            }
            EvidenceSelection::Uniform => 1.0 / n as f64,
            EvidenceSelection::FreshBiased { q } => q.powi((n - 1 - k) as i32) * (1.0 - q) / (1.0 - q.powi(n as i32)),
            EvidenceSelection::Geometric { q } => q.powi(k as i32) * (1.0 - q) / (1.0 - q.powi(n as i32)),
        }
    }

    /// The weights of ranks `0..n`.
    pub fn weights(&self, n: usize) -> Vec<f64> {
        (0..n).map(|k| self.rank_weight(k, n)).collect()
    }

    /// ω(i, x).
    pub fn weight(&self, m: &EvidenceMap, uid: u64, review: &ReviewId) -> Result<f64, SelectionError> {
        let n = m.feedbacks_of(uid).len();
        let k = m
            .rank_of(uid, review)
            .ok_or(SelectionError::NotAFeedbackOfInteraction { uid, review: *review })?;
        Ok(self.rank_weight(k, n))
    }

    /// Samples one feedback per interaction of A⁺, independently by weight.
    pub fn select_trace<R: Rng + ?Sized>(
        &self,
        m: &EvidenceMap,
        context: &InteractionSet,
        rng: &mut R,
    ) -> FeedbackTrace {
        let mut entries = Vec::new();
        for uid in m.with_feedback(context) {
            let fbs = m.feedbacks_of(uid);
            let n = fbs.len();
            let pick = match self {
                EvidenceSelection::Deterministic => n - 1,
                EvidenceSelection::Uniform => rng.gen_range(0..n),
                _ => {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut pick = n - 1;
                    for k in 0..n {
                        acc += self.rank_weight(k, n);
                        if u < acc {
                            pick = k;
                            break;
                        }
                    }
                    pick
                }
            };
            entries.push((uid, fbs[pick]));
        }
        FeedbackTrace::from_sorted(entries)
    }
}

impl fmt::Display for EvidenceSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvidenceSelection::Deterministic => f.write_str("deterministic"),
            EvidenceSelection::Uniform => f.write_str("uniform"),
            EvidenceSelection::FreshBiased { q } => write!(f, "fresh({q})"),
            EvidenceSelection::Geometric { q } => write!(f, "geometric({q})"),
        }
    }
}

impl FromStr for EvidenceSelection {
    type Err = SelectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let parse_err = || SelectionError::Parse(s.to_owned());
        match s {
            "deterministic" => return Ok(EvidenceSelection::Deterministic),
            "uniform" => return Ok(EvidenceSelection::Uniform),
            _ => {}
        }
        let (name, rest) = s.split_once('(').ok_or_else(parse_err)?;
        let q: f64 = rest
            .strip_suffix(')')
            .ok_or_else(parse_err)?
            .trim()
            .parse()
            .map_err(|_| parse_err())?;
        match name.trim() {
            "fresh" | "fresh-biased" => Self::fresh_biased(q),
            "geometric" => Self::geometric(q),
            _ => Err(parse_err()),
        }
    }
}

impl TryFrom<String> for EvidenceSelection {
    type Error = SelectionError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<EvidenceSelection> for String {
    fn from(s: EvidenceSelection) -> String {
        s.to_string()
    }
}
