//! Scoring mechanisms μ and recommendation scores σ.
//!
//! `sigma_bruteforce` enumerates every maximal trace and is the reference
//! evaluator. For the two shipped mechanisms σ also has a closed form by
//! linearity of expectation, implemented in [`sigma_linear`]:
//!
//! * average: `σ(A) = (1/|A⁺|) Σ_{i∈A⁺} Σ_x ω(i,x) ρ(x)`
//! * latest:  `σ(A) = Σ_x ω(i*,x) ρ(x)` where `i*` is the newest interaction in A⁺
//!
//! Both hold because `|α| = |A⁺|` is the same for every maximal trace and
//! the weight product factorises over interactions.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{enumerate_maximal_traces, EvidenceMap, FeedbackTrace, InteractionSet, ReviewId};
use crate::selection::EvidenceSelection;
use crate::Service;

pub const DEFAULT_RATING_THRESHOLD: u8 = 3;
pub const DEFAULT_EMPTY_VALUE: f64 = 0.5;
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoringError {
    #[error("scoring mechanism applied to the empty trace")]
    EmptyTrace,
    #[error("{count} maximal traces exceed the enumeration cap of {cap}")]
    EnumerationCapExceeded { count: u128, cap: u128 },
    #[error("unknown service {0}")]
    UnknownService(Service),
    #[error("trace assigns {0:?}, which is not a recorded feedback")]
    UnknownReview(ReviewId),
    #[error("unrecognised mechanism {0:?}; expected average or latest")]
    ParseMechanism(String),
}

/// ρ: 1 iff the rating reaches the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingProjection {
    pub threshold: u8,
}

impl Default for RatingProjection {
    fn default() -> Self {
        RatingProjection {
            threshold: DEFAULT_RATING_THRESHOLD,
        }
    }
}

impl RatingProjection {
    pub fn new(threshold: u8) -> Self {
        RatingProjection { threshold }
    }

    pub fn rho(&self, rating: u8) -> f64 {
        if rating >= self.threshold {
            1.0
        } else {
            0.0
        }
    }

    pub fn of(&self, m: &EvidenceMap, id: &ReviewId) -> Result<f64, ScoringError> {
        m.review(id)
            .map(|r| self.rho(r.rating))
            .ok_or(ScoringError::UnknownReview(*id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Average,
    Latest,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Average => "average",
            Mechanism::Latest => "latest",
        })
    }
}

impl FromStr for Mechanism {
    type Err = ScoringError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "average" => Ok(Mechanism::Average),
            "latest" => Ok(Mechanism::Latest),
            other => Err(ScoringError::ParseMechanism(other.to_owned())),
        }
    }
}

/// μ together with ρ and the value it takes on the empty trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringMechanism {
    pub mechanism: Mechanism,
    #[serde(default)]
    pub rho: RatingProjection,
    #[serde(default = "default_empty")]
    pub empty_value: f64,
}

fn default_empty() -> f64 {
    DEFAULT_EMPTY_VALUE
}

impl ScoringMechanism {
    pub fn new(mechanism: Mechanism) -> Self {
        ScoringMechanism {
            mechanism,
            rho: RatingProjection::default(),
            empty_value: DEFAULT_EMPTY_VALUE,
        }
    }

    pub fn average() -> Self {
        Self::new(Mechanism::Average)
    }

    pub fn latest() -> Self {
        Self::new(Mechanism::Latest)
    }

    pub fn with_empty_value(mut self, v: f64) -> Self {
        self.empty_value = v;
        self
    }

    pub fn with_rho(mut self, rho: RatingProjection) -> Self {
        self.rho = rho;
        self
    }

    /// μ(α), with μ({}) = `empty_value`.
    pub fn eval(&self, m: &EvidenceMap, trace: &FeedbackTrace) -> Result<f64, ScoringError> {
        let r = match self.mechanism {
            Mechanism::Average => mu_average(m, trace, &self.rho),
            Mechanism::Latest => mu_latest(m, trace, &self.rho),
        };
        match r {
            Err(ScoringError::EmptyTrace) => Ok(self.empty_value),
            r => r,
        }
    }
}

/// Σ ρ(α(i)) / |α|.
pub fn mu_average(m: &EvidenceMap, trace: &FeedbackTrace, rho: &RatingProjection) -> Result<f64, ScoringError> {
    if trace.is_empty() {
        return Err(ScoringError::EmptyTrace);
    }
    let mut sum = 0.0;
    for (_, x) in trace.iter() {
        sum += rho.of(m, &x)?;
    }
    Ok(sum / trace.len() as f64)
}

/// ρ of the feedback assigned to the newest interaction of the trace.
pub fn mu_latest(m: &EvidenceMap, trace: &FeedbackTrace, rho: &RatingProjection) -> Result<f64, ScoringError> {
    let newest = trace
        .iter()
        .max_by_key(|(uid, _)| m.interaction(*uid).map(|i| i.time))
        .ok_or(ScoringError::EmptyTrace)?;
    rho.of(m, &newest.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub value: f64,
    /// Number of maximal traces the sum ranges over (saturating).
    pub trace_count: u128,
    /// |A⁺|.
    pub context_size: usize,
}

/// Σ over maximal traces α of Π ω(i, α(i)). Equals 1 for a valid selection.
pub fn trace_weight_total(
    m: &EvidenceMap,
    a: &InteractionSet,
    sel: &EvidenceSelection,
    cap: u128,
) -> Result<f64, ScoringError> {
    let traces = enumerate_maximal_traces(m, a);
    let count = traces.count_total();
    if count > cap {
        return Err(ScoringError::EnumerationCapExceeded { count, cap });
    }
    let mut total = 0.0;
    for t in traces {
        total += weight_product(m, &t, sel);
    }
    Ok(total)
}

fn weight_product(m: &EvidenceMap, t: &FeedbackTrace, sel: &EvidenceSelection) -> f64 {
    t.iter()
        .map(|(u, x)| sel.weight(m, u, &x).expect("maximal traces assign own feedbacks"))
        .product()
}

/// σ(A) by enumeration of maximal traces, with the default cap.
pub fn sigma_bruteforce(
    m: &EvidenceMap,
    a: &InteractionSet,
    mu: &ScoringMechanism,
    sel: &EvidenceSelection,
) -> Result<ScoreResult, ScoringError> {
    sigma_bruteforce_capped(m, a, mu, sel, DEFAULT_ENUMERATION_CAP)
}

pub fn sigma_bruteforce_capped(
    m: &EvidenceMap,
    a: &InteractionSet,
    mu: &ScoringMechanism,
    sel: &EvidenceSelection,
    cap: u128,
) -> Result<ScoreResult, ScoringError> {
    let traces = enumerate_maximal_traces(m, a);
    let count = traces.count_total();
    if count > cap {
        return Err(ScoringError::EnumerationCapExceeded { count, cap });
    }
    let context_size = traces.columns().len();
    if context_size == 0 {
        return Ok(ScoreResult {
            value: mu.empty_value,
            trace_count: 1,
            context_size,
        });
    }
    let mut value = 0.0;
    for t in traces {
        value += mu.eval(m, &t)? * weight_product(m, &t, sel);
    }
    Ok(ScoreResult {
        value,
        trace_count: count,
        context_size,
    })
}

/// E[ρ(α(i))] under ω for one interaction: Σ_x ω(i,x) ρ(x).
pub fn expected_rho(m: &EvidenceMap, uid: u64, sel: &EvidenceSelection, rho: &RatingProjection) -> f64 {
    let fbs = m.feedbacks_of(uid);
    let n = fbs.len();
    fbs.iter()
        .enumerate()
        .map(|(k, x)| {
            let r = m.review(x).map(|r| rho.rho(r.rating)).unwrap_or(0.0);
            sel.rank_weight(k, n) * r
        })
        .sum()
}

/// σ(A) through the closed forms; O(Σ |ε⁻¹(i)|) instead of exponential.
pub fn sigma_linear(
    m: &EvidenceMap,
    a: &InteractionSet,
    mu: &ScoringMechanism,
    sel: &EvidenceSelection,
) -> ScoreResult {
    let plus = m.with_feedback(a);
    let trace_count = plus
        .iter()
        .fold(1u128, |acc, u| acc.saturating_mul(m.feedbacks_of(*u).len() as u128));
    let value = if plus.is_empty() {
        mu.empty_value
    } else {
        match mu.mechanism {
            Mechanism::Average => {
                plus.iter().map(|u| expected_rho(m, *u, sel, &mu.rho)).sum::<f64>() / plus.len() as f64
            }
            Mechanism::Latest => {
                let newest = plus
                    .iter()
                    .copied()
                    .max_by_key(|u| m.interaction(*u).map(|i| i.time))
                    .expect("nonempty");
                expected_rho(m, newest, sel, &mu.rho)
            }
        }
    };
    ScoreResult {
        value,
        trace_count,
        context_size: plus.len(),
    }
}

/// Which interactions of a service count towards its score.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Context {
    #[default]
    All,
    Set(InteractionSet),
}

impl Context {
    fn restrict(&self, set: &InteractionSet) -> InteractionSet {
        match self {
            Context::All => set.clone(),
            Context::Set(u) => set.intersection(u).copied().collect(),
        }
    }
}

fn service_set(m: &EvidenceMap, y: &Service, ctx: &Context) -> Result<InteractionSet, ScoringError> {
    m.interactions_of(y)
        .map(|s| ctx.restrict(s))
        .ok_or_else(|| ScoringError::UnknownService(y.clone()))
}

/// σ(y|U) = σ(π⁻¹(y) ∩ U), by enumeration.
pub fn sigma_service(
    m: &EvidenceMap,
    y: &Service,
    ctx: &Context,
    mu: &ScoringMechanism,
    sel: &EvidenceSelection,
) -> Result<ScoreResult, ScoringError> {
    sigma_bruteforce(m, &service_set(m, y, ctx)?, mu, sel)
}

/// σ(y|U) through the closed forms.
pub fn sigma_service_linear(
    m: &EvidenceMap,
    y: &Service,
    ctx: &Context,
    mu: &ScoringMechanism,
    sel: &EvidenceSelection,
) -> Result<ScoreResult, ScoringError> {
    Ok(sigma_linear(m, &service_set(m, y, ctx)?, mu, sel))
}

/// Running average under deterministic selection: the newest feedback of
/// each interaction counts once. Re-reviews replace the interaction's
/// previous contribution.
#[derive(Debug, Clone, Default)]
pub struct OnlineAverage {
    rho: RatingProjection,
    empty_value: f64,
    positives: u64,
    count: u64,
    last: std::collections::BTreeMap<u64, bool>,
}

impl OnlineAverage {
    pub fn new(rho: RatingProjection, empty_value: f64) -> Self {
        OnlineAverage {
            rho,
            empty_value,
            ..Default::default()
        }
    }

    /// Feeds the next feedback, in logical-time order.
    pub fn push(&mut self, uid: u64, rating: u8) {
        let pos = self.rho.rho(rating) == 1.0;
        match self.last.insert(uid, pos) {
            Some(prev) => {
                self.positives -= prev as u64;
            }
            None => self.count += 1,
        }
        self.positives += pos as u64;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn value(&self) -> f64 {
        if self.count == 0 {
            self.empty_value
        } else {
            self.positives as f64 / self.count as f64
        }
    }
}

/// Online σ over a time-ordered stream of `(uid, rating)` feedbacks.
pub fn sigma_online_average(
    stream: impl IntoIterator<Item = (u64, u8)>,
    rho: RatingProjection,
    empty_value: f64,
) -> f64 {
    let mut acc = OnlineAverage::new(rho, empty_value);
    for (uid, rating) in stream {
        acc.push(uid, rating);
    }
    acc.value()
}

/// Consecutive sub-tolerance steps needed to declare convergence.
pub const SUSTAINED_STEPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum LimitOutcome {
    Converged { value: f64, steps: usize },
    NonConvergent { steps: usize, last: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LimitError {
    #[error("increment {step} is empty or overlaps earlier sets")]
    NotIncreasing { step: usize },
}

/// Approximates σ(A) = lim σ(Aₙ) for `A₁ ⊂ A₂ ⊂ …`, where each `Aₙ` is the
/// union of the first `n` increments. Converged once `|σ(Aₙ₊₁) − σ(Aₙ)| <
/// tol` holds for [`SUSTAINED_STEPS`] consecutive steps.
pub fn sigma_limit(
    m: &EvidenceMap,
    increments: impl IntoIterator<Item = InteractionSet>,
    mu: &ScoringMechanism,
    sel: &EvidenceSelection,
    tol: f64,
    max_steps: usize,
) -> Result<LimitOutcome, LimitError> {
    let mut seen = BTreeSet::new();
    let mut sum = 0.0;
    let mut n_plus = 0usize;
    let mut newest: Option<(crate::LogicalTime, f64)> = None;
    let mut prev: Option<f64> = None;
    let mut streak = 0;
    let mut steps = 0;
    let mut last = mu.empty_value;

    for (step, inc) in increments.into_iter().take(max_steps).enumerate() {
        if inc.is_empty() || inc.iter().any(|u| seen.contains(u)) {
            return Err(LimitError::NotIncreasing { step });
        }
        for uid in inc {
            seen.insert(uid);
            if m.feedbacks_of(uid).is_empty() {
                continue;
            }
            let e = expected_rho(m, uid, sel, &mu.rho);
            sum += e;
            n_plus += 1;
            let t = m.interaction(uid).map(|i| i.time).unwrap_or_default();
            if newest.is_none_or(|(nt, _)| t > nt) {
                newest = Some((t, e));
            }
        }
        let value = match (n_plus, mu.mechanism) {
            (0, _) => mu.empty_value,
            (n, Mechanism::Average) => sum / n as f64,
            (_, Mechanism::Latest) => newest.map(|x| x.1).unwrap_or(mu.empty_value),
        };
        steps = step + 1;
        if let Some(p) = prev {
            if (value - p).abs() < tol {
                streak += 1;
                if streak == SUSTAINED_STEPS {
                    return Ok(LimitOutcome::Converged { value, steps });
                }
            } else {
                streak = 0;
            }
        }
        prev = Some(value);
        last = value;
    }
    Ok(LimitOutcome::NonConvergent { steps, last })
}

/// Singleton increments `{i₁}, {i₂}, …` in the given order.
pub fn singleton_increments(uids: impl IntoIterator<Item = u64>) -> impl Iterator<Item = InteractionSet> {
    uids.into_iter().map(|u| InteractionSet::from([u]))
}
