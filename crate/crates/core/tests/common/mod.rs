//! Random evidence maps and reference implementations that do not go
//! through the library's trace enumerator or selection code.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use trustledger::evidence::{EvidenceMap, Interaction, InteractionSet, Review, ReviewId};
use trustledger::selection::EvidenceSelection;
use trustledger::{Address, LogicalTime, Service};

/// Plain description of an evidence map.
///
/// Interaction `k` (uid `k + 1`) is recorded at block `k + 1`. Each review
/// carries `(rating, key)`; reviews are recorded at block `100 + key`, so
/// random keys interleave the feedbacks of different interactions.
#[derive(Debug, Clone)]
pub struct MapSpec {
    pub interactions: Vec<(u8, Vec<(u8, u8)>)>,
    /// Reviews that cite no interaction.
    pub loose: Vec<(u8, u8)>,
}

impl MapSpec {
    pub fn random<R: Rng>(rng: &mut R, max_interactions: usize, max_feedbacks: usize) -> MapSpec {
        let n = rng.gen_range(1..=max_interactions);
        let interactions = (0..n)
            .map(|_| {
                let service = rng.gen_range(0..2u8);
                let f = rng.gen_range(0..=max_feedbacks);
                let reviews = (0..f)
                    .map(|_| (rng.gen_range(0..=5u8), rng.gen_range(0..40u8)))
                    .collect();
                (service, reviews)
            })
            .collect();
        let loose = (0..rng.gen_range(0..3))
            .map(|_| (rng.gen_range(0..=5u8), rng.gen_range(0..40u8)))
            .collect();
        MapSpec { interactions, loose }
    }

    pub fn build(&self) -> EvidenceMap {
        let mut m = EvidenceMap::new();
        for (k, (service, _)) in self.interactions.iter().enumerate() {
            m.insert_interaction(Interaction {
                uid: k as u64 + 1,
                user: Address::new(format!("u{k}")),
                service: Service::from(format!("s{service}").as_str()),
                time: LogicalTime::new(k as u64 + 1, 0),
            })
            .unwrap();
        }
        let mut counter = 0u32;
        let mut next_time = |key: u8| {
            counter += 1;
            LogicalTime::new(100 + key as u64, counter)
        };
        for (k, (_, reviews)) in self.interactions.iter().enumerate() {
            for (rating, key) in reviews {
                m.insert_review(Review {
                    id: ReviewId(next_time(*key)),
                    submitter: Address::new(format!("u{k}")),
                    uid: Some(k as u64 + 1),
                    rating: *rating,
                })
                .unwrap();
            }
        }
        for (rating, key) in &self.loose {
            m.insert_review(Review {
                id: ReviewId(next_time(*key)),
                submitter: Address::new("loose"),
                uid: None,
                rating: *rating,
            })
            .unwrap();
        }
        m
    }

    pub fn all_uids(&self) -> InteractionSet {
        (1..=self.interactions.len() as u64).collect()
    }

    /// Feedbacks as a `(uid, rating)` stream in recording order.
    pub fn stream(&self) -> Vec<(u64, u8)> {
        let m = self.build();
        m.reviews().filter_map(|r| r.uid.map(|u| (u, r.rating))).collect()
    }
}

pub fn selections() -> Vec<EvidenceSelection> {
    vec![
        EvidenceSelection::Deterministic,
        EvidenceSelection::Uniform,
        EvidenceSelection::fresh_biased(0.5).unwrap(),
        EvidenceSelection::geometric(0.3).unwrap(),
    ]
}

/// ω over `n` feedbacks ordered oldest first, written out per variant.
pub fn oracle_weights(sel: &EvidenceSelection, n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    match *sel {
        EvidenceSelection::Deterministic => w[n - 1] = 1.0,
        EvidenceSelection::Uniform => w.iter_mut().for_each(|x| *x = 1.0 / n as f64),
        EvidenceSelection::FreshBiased { q } => {
            let z: f64 = (0..n).map(|j| q.powi(j as i32)).sum();
            for (k, x) in w.iter_mut().enumerate() {
                *x = q.powi((n - 1 - k) as i32) / z;
            }
        }
        EvidenceSelection::Geometric { q } => {
            let z: f64 = (0..n).map(|j| q.powi(j as i32)).sum();
            for (k, x) in w.iter_mut().enumerate() {
                *x = q.powi(k as i32) / z;
            }
        }
    }
    w
}

#[derive(Debug, Clone, Copy)]
pub enum OracleMu {
    Average,
    Latest,
    /// Number of positive feedbacks in the trace; bounded by the trace size
    /// but not by 1.
    Sum,
}

/// σ(A) by depth-first enumeration over (uid, feedback) choices.
/// Returns `None` when A⁺ is empty.
pub fn oracle_sigma(m: &EvidenceMap, a: &InteractionSet, sel: &EvidenceSelection, mu: OracleMu) -> Option<f64> {
    // interactions with feedback, each with (interaction time, [(weight, rho)])
    let cols: Vec<(LogicalTime, Vec<(f64, f64)>)> = a
        .iter()
        .filter_map(|u| {
            let mut fbs: Vec<_> = m.reviews().filter(|r| r.uid == Some(*u)).collect();
            if fbs.is_empty() {
                return None;
            }
            fbs.sort_by_key(|r| r.id);
            let w = oracle_weights(sel, fbs.len());
            let col = fbs
                .iter()
                .zip(w)
                .map(|(r, w)| (w, if r.rating >= 3 { 1.0 } else { 0.0 }))
                .collect();
            Some((m.interaction(*u).unwrap().time, col))
        })
        .collect();
    if cols.is_empty() {
        return None;
    }
    fn walk(
        cols: &[(LogicalTime, Vec<(f64, f64)>)],
        picked: &mut Vec<f64>,
        weight: f64,
        mu: OracleMu,
        total: &mut f64,
    ) {
        if picked.len() == cols.len() {
            let v = match mu {
                OracleMu::Average => picked.iter().sum::<f64>() / picked.len() as f64,
                OracleMu::Sum => picked.iter().sum::<f64>(),
                OracleMu::Latest => {
                    let newest = (0..cols.len()).max_by_key(|i| cols[*i].0).unwrap();
                    picked[newest]
                }
            };
            *total += weight * v;
            return;
        }
        for (w, r) in &cols[picked.len()].1 {
            picked.push(*r);
            walk(cols, picked, weight * w, mu, total);
            picked.pop();
        }
    }
    let mut total = 0.0;
    walk(&cols, &mut Vec::new(), 1.0, mu, &mut total);
    Some(total)
}

/// Online average of the newest feedback per interaction, from a stream.
pub fn oracle_newest_average(stream: &[(u64, u8)]) -> Option<f64> {
    let mut last = BTreeMap::new();
    for (u, r) in stream {
        last.insert(*u, *r);
    }
    if last.is_empty() {
        return None;
    }
    Some(last.values().filter(|r| **r >= 3).count() as f64 / last.len() as f64)
}

pub fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"))
}

pub const ATTACK_SCENARIOS: &[&str] = &[
    "badmouthing",
    "goodmouthing",
    "collusion-spike",
    "sybil",
    "on-off",
    "opportunistic",
];
