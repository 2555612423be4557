//! Attack heuristics over the evidence a provider has seen.
//!
//! Every detector is a pure function of the evidence map, so two providers
//! holding the same chain prefix produce the same reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::EvidenceMap;
use crate::scoring::RatingProjection;
use crate::{Address, Service};

pub const DEFAULT_SPIKE_WINDOW: u64 = 5;
pub const DEFAULT_SPIKE_THRESHOLD: f64 = 5.0;
pub const DEFAULT_SERIAL_K: usize = 3;
pub const DEFAULT_MIN_LIFETIME: u64 = 10;
/// Complete windows that must precede a window before it is judged.
pub const SPIKE_HISTORY_WINDOWS: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DetectionKind {
    FeedbackSpike,
    SerialNegative,
    ShortLivedAccount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub kind: DetectionKind,
    /// Service for spikes, account for short-lived accounts, `user@service`
    /// for serial negatives.
    pub subject: String,
    /// Inclusive block range the report covers.
    pub window: (u64, u64),
    /// Number of events behind the report.
    pub count: u64,
    /// Reference level the count was compared against (spikes only).
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DetectError {
    #[error("need at least two complete windows of {window} blocks, have {blocks} blocks")]
    InsufficientHistory { window: u64, blocks: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub spike_window: u64,
    pub spike_threshold: f64,
    pub serial_k: usize,
    pub min_lifetime_blocks: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            spike_window: DEFAULT_SPIKE_WINDOW,
            spike_threshold: DEFAULT_SPIKE_THRESHOLD,
            serial_k: DEFAULT_SERIAL_K,
            min_lifetime_blocks: DEFAULT_MIN_LIFETIME,
        }
    }
}

/// Negative feedbacks per service, split into windows of `window` blocks
/// starting at block 1. Only windows that end at or before `head` count.
/// A window is flagged when its count exceeds `threshold` times the mean of
/// the windows before it (the mean is floored at 1). The first
/// [`SPIKE_HISTORY_WINDOWS`] windows only serve as history: a run's opening
/// window is often nearly empty and makes a poor reference.
pub fn detect_spike(
    m: &EvidenceMap,
    rho: &RatingProjection,
    head: u64,
    window: u64,
    threshold: f64,
) -> Result<Vec<DetectionReport>, DetectError> {
    let window = window.max(1);
    let complete = head / window;
    if complete <= SPIKE_HISTORY_WINDOWS {
        return Err(DetectError::InsufficientHistory { window, blocks: head });
    }
    let mut counts: BTreeMap<&Service, Vec<u64>> = BTreeMap::new();
    for r in m.reviews() {
        let Some(svc) = r.uid.and_then(|u| m.pi(u)) else {
            continue;
        };
        let b = r.time().block;
        if b == 0 || b > complete * window || rho.rho(r.rating) > 0.0 {
            continue;
        }
        let slot = ((b - 1) / window) as usize;
        counts.entry(svc).or_insert_with(|| vec![0; complete as usize])[slot] += 1;
    }
    let mut out = Vec::new();
    for (svc, c) in counts {
        let mut prior = 0u64;
        for (j, &n) in c.iter().enumerate() {
            if j as u64 >= SPIKE_HISTORY_WINDOWS {
                let mean = (prior as f64 / j as f64).max(1.0);
                if n as f64 > threshold * mean {
                    let start = j as u64 * window + 1;
                    out.push(DetectionReport {
                        kind: DetectionKind::FeedbackSpike,
                        subject: svc.to_string(),
                        window: (start, start + window - 1),
                        count: n,
                        reference: mean,
                    });
                }
            }
            prior += n;
        }
    }
    Ok(out)
}

/// (user, service) pairs with at least `k` consecutive negative feedbacks.
/// One report per pair, for its first qualifying run.
pub fn detect_serial_negative(m: &EvidenceMap, rho: &RatingProjection, k: usize) -> Vec<DetectionReport> {
    // run length and first block of the current run, per pair
    let mut runs: BTreeMap<(&Address, &Service), (usize, u64)> = BTreeMap::new();
    let mut done: BTreeMap<(&Address, &Service), DetectionReport> = BTreeMap::new();
    for r in m.reviews() {
        let Some(i) = r.uid.and_then(|u| m.interaction(u)) else {
            continue;
        };
        let key = (&i.user, &i.service);
        if done.contains_key(&key) {
            continue;
        }
        let b = r.time().block;
        let run = runs.entry(key).or_insert((0, b));
        if rho.rho(r.rating) > 0.0 {
            *run = (0, b);
            continue;
        }
        if run.0 == 0 {
            run.1 = b;
        }
        run.0 += 1;
        if run.0 >= k.max(1) {
            done.insert(
                key,
                DetectionReport {
                    kind: DetectionKind::SerialNegative,
                    subject: format!("{}@{}", i.user, i.service),
                    window: (run.1, b),
                    count: run.0 as u64,
                    reference: 0.0,
                },
            );
        }
    }
    done.into_values().collect()
}

/// Accounts whose activity spans fewer than `min_lifetime` blocks and whose
/// feedbacks all target one service.
pub fn detect_short_lived(m: &EvidenceMap, min_lifetime: u64) -> Vec<DetectionReport> {
    struct Footprint<'a> {
        first: u64,
        last: u64,
        events: u64,
        targets: Vec<&'a Service>,
    }
    let mut fp: BTreeMap<&Address, Footprint> = BTreeMap::new();
    let mut touch = |who, b: u64| {
        let f = fp.entry(who).or_insert(Footprint {
            first: b,
            last: b,
            events: 0,
            targets: Vec::new(),
        });
        f.first = f.first.min(b);
        f.last = f.last.max(b);
        f.events += 1;
    };
    for i in m.interactions() {
        touch(&i.user, i.time.block);
    }
    for r in m.reviews() {
        touch(&r.submitter, r.time().block);
    }
    for r in m.reviews() {
        if let Some(svc) = r.uid.and_then(|u| m.pi(u)) {
            let f = fp.get_mut(&r.submitter).expect("touched above");
            if !f.targets.contains(&svc) {
                f.targets.push(svc);
            }
        }
    }
    fp.into_iter()
        .filter(|(_, f)| f.targets.len() == 1 && f.last - f.first < min_lifetime)
        .map(|(who, f)| DetectionReport {
            kind: DetectionKind::ShortLivedAccount,
            subject: who.to_string(),
            window: (f.first, f.last),
            count: f.events,
            reference: 0.0,
        })
        .collect()
}
