//! Evidence map and service projection.
//!
//! Reviews map (partially) to the interactions that support them; every
//! interaction projects to the service it used. A review in the domain of
//! the evidence map is a *feedback*. A [`FeedbackTrace`] picks at most one
//! feedback per interaction, always one of that interaction's own.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::ledger::{EventPayload, LedgerEvent};
use crate::{Address, LogicalTime, Service};

/// A finite set of interactions, by uid.
pub type InteractionSet = BTreeSet<u64>;

/// Review identity: the logical time at which it was recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReviewId(pub LogicalTime);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Review {
    pub id: ReviewId,
    pub submitter: Address,
    /// Supporting interaction; `None` for a review that is not a feedback.
    pub uid: Option<u64>,
    pub rating: u8,
}

impl Review {
    pub fn time(&self) -> LogicalTime {
        self.id.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub uid: u64,
    pub user: Address,
    pub service: Service,
    pub time: LogicalTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvidenceError {
    #[error("feedback {review:?} references unknown interaction {uid}")]
    DanglingFeedback { review: ReviewId, uid: u64 },
    #[error("interaction uid {0} recorded twice")]
    DuplicateInteraction(u64),
    #[error("review {0:?} recorded twice")]
    DuplicateReview(ReviewId),
    #[error("unknown service {0}")]
    UnknownService(Service),
}

/// The evidence map ε (reviews → interactions) together with the service
/// projection π (interactions → services) and their inverses.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvidenceMap {
    reviews: BTreeMap<ReviewId, Review>,
    interactions: BTreeMap<u64, Interaction>,
    /// Inverse of ε, each list ordered oldest first (rank 0 = oldest).
    feedbacks: BTreeMap<u64, Vec<ReviewId>>,
    /// Inverse of π.
    by_service: BTreeMap<Service, InteractionSet>,
}

/// Builds ε and π from ledger events, in event order.
pub fn build_evidence_map<'a>(events: impl IntoIterator<Item = &'a LedgerEvent>) -> Result<EvidenceMap, EvidenceError> {
    let mut m = EvidenceMap::new();
    for ev in events {
        m.ingest_event(ev)?;
    }
    Ok(m)
}

impl EvidenceMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Extends the map with one event. Returns the service it touched, if
    /// any.
    pub fn ingest_event(&mut self, ev: &LedgerEvent) -> Result<Option<Service>, EvidenceError> {
        match &ev.payload {
            EventPayload::Interaction { user, resource, uid } => {
                let service = Service(resource.clone());
                self.insert_interaction(Interaction {
                    uid: *uid,
                    user: user.clone(),
                    service: service.clone(),
                    time: ev.time(),
                })?;
                Ok(Some(service))
            }
            EventPayload::Feedback {
                submitter, rating, uid, ..
            } => {
                self.insert_review(Review {
                    id: ReviewId(ev.time()),
                    submitter: submitter.clone(),
                    uid: Some(*uid),
                    rating: *rating,
                })?;
                Ok(self.interactions.get(uid).map(|i| i.service.clone()))
            }
            _ => Ok(None),
        }
    }

    pub fn insert_interaction(&mut self, i: Interaction) -> Result<(), EvidenceError> {
        if self.interactions.contains_key(&i.uid) {
            return Err(EvidenceError::DuplicateInteraction(i.uid));
        }
        self.by_service.entry(i.service.clone()).or_default().insert(i.uid);
        self.interactions.insert(i.uid, i);
        Ok(())
    }

    /// Inserts a review; a review with a uid becomes a feedback of that
    /// interaction, which must already be present.
    pub fn insert_review(&mut self, r: Review) -> Result<(), EvidenceError> {
        if self.reviews.contains_key(&r.id) {
            return Err(EvidenceError::DuplicateReview(r.id));
        }
        if let Some(uid) = r.uid {
            if !self.interactions.contains_key(&uid) {
                return Err(EvidenceError::DanglingFeedback { review: r.id, uid });
            }
            let list = self.feedbacks.entry(uid).or_default();
            let pos = list.partition_point(|x| *x < r.id);
            list.insert(pos, r.id);
        }
        self.reviews.insert(r.id, r);
        Ok(())
    }

    pub fn review(&self, id: &ReviewId) -> Option<&Review> {
        self.reviews.get(id)
    }

    pub fn reviews(&self) -> impl Iterator<Item = &Review> {
        self.reviews.values()
    }

    pub fn interaction(&self, uid: u64) -> Option<&Interaction> {
        self.interactions.get(&uid)
    }

    pub fn interactions(&self) -> impl Iterator<Item = &Interaction> {
        self.interactions.values()
    }

    pub fn services(&self) -> impl Iterator<Item = &Service> {
        self.by_service.keys()
    }

    /// ε(x): the interaction supporting a review, if it is a feedback.
    pub fn epsilon(&self, id: &ReviewId) -> Option<u64> {
        self.reviews.get(id).and_then(|r| r.uid)
    }

    /// π(i): the service of an interaction.
    pub fn pi(&self, uid: u64) -> Option<&Service> {
        self.interactions.get(&uid).map(|i| &i.service)
    }

    /// ε⁻¹(i), oldest first.
    pub fn feedbacks_of(&self, uid: u64) -> &[ReviewId] {
        self.feedbacks.get(&uid).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Rank of a feedback among its interaction's feedbacks (0 = oldest).
    pub fn rank_of(&self, uid: u64, id: &ReviewId) -> Option<usize> {
        self.feedbacks_of(uid).binary_search(id).ok()
    }

    /// π⁻¹(y).
    pub fn interactions_of(&self, service: &Service) -> Option<&InteractionSet> {
        self.by_service.get(service)
    }

    /// All feedbacks (reviews in the domain of ε).
    pub fn feedback_ids(&self) -> impl Iterator<Item = &ReviewId> {
        self.reviews.values().filter(|r| r.uid.is_some()).map(|r| &r.id)
    }

    /// (ε∘π)⁻¹(y), ordered by logical time.
    pub fn feedbacks_for_service(&self, service: &Service) -> Result<Vec<ReviewId>, EvidenceError> {
        let uids = self
            .by_service
            .get(service)
            .ok_or_else(|| EvidenceError::UnknownService(service.clone()))?;
        let mut out: Vec<ReviewId> = uids
            .iter()
            .flat_map(|u| self.feedbacks_of(*u).iter().copied())
            .collect();
        out.sort();
        Ok(out)
    }

    /// A⁺: the interactions of `context` that have at least one feedback.
    pub fn with_feedback(&self, context: &InteractionSet) -> Vec<u64> {
        context
            .iter()
            .copied()
            .filter(|u| !self.feedbacks_of(*u).is_empty())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("interaction {uid} assigned review {review:?} which is not one of its feedbacks")]
    NotIdentity { uid: u64, review: ReviewId },
    #[error("review {0:?} assigned to more than one interaction")]
    NotInjective(ReviewId),
}

/// A partial assignment of feedbacks to interactions, stored sorted by uid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct FeedbackTrace {
    entries: Vec<(u64, ReviewId)>,
}

impl FeedbackTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u64, ReviewId)>) -> Self {
        let mut map = BTreeMap::new();
        for (u, r) in pairs {
            map.insert(u, r);
        }
        FeedbackTrace {
            entries: map.into_iter().collect(),
        }
    }

    /// Builds from entries already sorted by strictly increasing uid.
    pub(crate) fn from_sorted(entries: Vec<(u64, ReviewId)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        FeedbackTrace { entries }
    }

    pub fn insert(&mut self, uid: u64, review: ReviewId) {
        match self.entries.binary_search_by_key(&uid, |e| e.0) {
            Ok(i) => self.entries[i].1 = review,
            Err(i) => self.entries.insert(i, (uid, review)),
        }
    }

    pub fn get(&self, uid: u64) -> Option<ReviewId> {
        self.entries
            .binary_search_by_key(&uid, |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }

    /// |α|.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, ReviewId)> + '_ {
        self.entries.iter().copied()
    }

    pub fn domain(&self) -> InteractionSet {
        self.entries.iter().map(|e| e.0).collect()
    }

    /// α restricted to `set`.
    pub fn restrict(&self, set: &InteractionSet) -> FeedbackTrace {
        FeedbackTrace {
            entries: self.entries.iter().filter(|e| set.contains(&e.0)).copied().collect(),
        }
    }

    /// Checks ε∘α = id on the domain and injectivity.
    pub fn validate(&self, m: &EvidenceMap) -> Result<(), TraceError> {
        let mut seen = BTreeSet::new();
        for (uid, review) in self.iter() {
            if m.epsilon(&review) != Some(uid) {
                return Err(TraceError::NotIdentity { uid, review });
            }
            if !seen.insert(review) {
                return Err(TraceError::NotInjective(review));
            }
        }
        Ok(())
    }
}

/// The partial-function order: `a ≤ b` iff `a` is `b` restricted to dom(a).
pub fn trace_leq(a: &FeedbackTrace, b: &FeedbackTrace) -> bool {
    a.iter().all(|(u, r)| b.get(u) == Some(r))
}

/// Iterator over the maximal traces with domain A⁺, in odometer order (the
/// highest uid varies fastest, each over its feedbacks oldest first).
pub struct MaximalTraces<'a> {
    columns: Vec<(u64, &'a [ReviewId])>,
    cursor: Vec<usize>,
    done: bool,
}

impl<'a> MaximalTraces<'a> {
    pub(crate) fn columns(&self) -> &[(u64, &'a [ReviewId])] {
        &self.columns
    }

    /// Number of traces the iterator yields in total, saturating.
    pub fn count_total(&self) -> u128 {
        self.columns
            .iter()
            .fold(1u128, |acc, (_, c)| acc.saturating_mul(c.len() as u128))
    }

    /// Advances the odometer; returns the cursor of the next trace.
    pub(crate) fn next_cursor(&mut self) -> Option<&[usize]> {
        if self.done {
            return None;
        }
        if self.cursor.is_empty() && !self.columns.is_empty() {
            self.cursor = vec![0; self.columns.len()];
            return Some(&self.cursor);
        }
        if self.cursor.is_empty() {
            // A⁺ empty: the single empty trace
            self.done = true;
            return Some(&self.cursor);
        }
        for pos in (0..self.columns.len()).rev() {
            self.cursor[pos] += 1;
            if self.cursor[pos] < self.columns[pos].1.len() {
                return Some(&self.cursor);
            }
            self.cursor[pos] = 0;
        }
        self.done = true;
        None
    }
}

impl Iterator for MaximalTraces<'_> {
    type Item = FeedbackTrace;

    fn next(&mut self) -> Option<FeedbackTrace> {
        let cursor = self.next_cursor()?.to_vec();
        Some(FeedbackTrace::from_sorted(
            self.columns
                .iter()
                .zip(cursor)
                .map(|((u, col), k)| (*u, col[k]))
                .collect(),
        ))
    }
}

/// Enumerates every maximal trace whose domain is A⁺ exactly once.
pub fn enumerate_maximal_traces<'a>(m: &'a EvidenceMap, context: &InteractionSet) -> MaximalTraces<'a> {
    let columns: Vec<_> = m
        .with_feedback(context)
        .into_iter()
        .map(|u| (u, m.feedbacks_of(u)))
        .collect();
    MaximalTraces {
        columns,
        cursor: Vec::new(),
        done: false,
    }
}
