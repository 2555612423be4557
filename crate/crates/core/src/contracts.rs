//! Transaction handlers: resource access, feedback validation and the
//! trust-provider registry.
//!
//! Handlers run inside block production. Each validates fully before it
//! mutates anything, so a rejected transaction leaves state untouched apart
//! from the gas fee the ledger has already charged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{Chain, EventPayload, TxPayload};
use crate::{Address, Service};

/// Default highest accepted rating.
pub const DEFAULT_MAX_RATING: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractConfig {
    pub max_rating: u8,
}

impl Default for ContractConfig {
    fn default() -> Self {
        ContractConfig {
            max_rating: DEFAULT_MAX_RATING,
        }
    }
}

/// Reasons a transaction reverts during execution.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "reason")]
pub enum ContractError {
    #[error("no interaction with uid {uid}")]
    NoSuchInteraction { uid: u64 },
    #[error("submitter {submitter} did not perform interaction {uid}")]
    SubmitterMismatch { uid: u64, submitter: Address },
    #[error("rating {rating} outside 0..={max}")]
    RatingOutOfRange { rating: i64, max: u8 },
    #[error("unknown resource {resource}")]
    UnknownResource { resource: Address },
    #[error("payment {paid} below access price {price}")]
    InsufficientPayment { paid: u64, price: u64 },
    #[error("unknown provider {provider}")]
    UnknownProvider { provider: Address },
    #[error("query fee {paid} below provider fee {fee}")]
    InsufficientFee { paid: u64, fee: u64 },
    #[error("score {score} outside [0, 1]")]
    ScoreOutOfRange { score: String },
    #[error("provider {provider} already registered")]
    AlreadyRegistered { provider: Address },
    #[error("balance {balance} cannot cover {needed}")]
    InsufficientFunds { balance: u64, needed: u64 },
    #[error("unknown recipient {recipient}")]
    UnknownRecipient { recipient: Address },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resource {
    pub owner: Address,
    pub price: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user: Address,
    pub resource: Address,
}

/// World state used to validate reviews, derived from sealed interactions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeedbackState {
    pub valid_interactions: BTreeMap<u64, InteractionRecord>,
    pub review_counts: BTreeMap<u64, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachedScore {
    pub score: f64,
    pub as_of_block: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderRecord {
    pub provider: Address,
    pub fee: u64,
    pub empty_score: f64,
    pub cached_scores: BTreeMap<Service, CachedScore>,
}

/// Execution context handed to handlers by the ledger.
pub struct ExecEnv<'a> {
    pub block_number: u64,
    pub balances: &'a mut BTreeMap<Address, u64>,
}

impl ExecEnv<'_> {
    fn balance(&self, a: &Address) -> u64 {
        self.balances.get(a).copied().unwrap_or(0)
    }

    fn ensure_funds(&self, a: &Address, needed: u64) -> Result<(), ContractError> {
        let balance = self.balance(a);
        if balance < needed {
            return Err(ContractError::InsufficientFunds { balance, needed });
        }
        Ok(())
    }

    /// Moves tokens; callers must have checked funds and recipient.
    fn transfer(&mut self, from: &Address, to: &Address, amount: u64) {
        if amount == 0 || from == to {
            return;
        }
        *self.balances.get_mut(from).expect("sender exists") -= amount;
        *self.balances.get_mut(to).expect("recipient exists") += amount;
    }
}

#[derive(Debug, Clone, Default)]
pub struct ContractState {
    config: ContractConfig,
    resources: BTreeMap<Address, Resource>,
    feedback: FeedbackState,
    providers: BTreeMap<Address, ProviderRecord>,
    next_uid: u64,
}

impl ContractState {
    pub fn new(config: ContractConfig) -> Self {
        ContractState {
            config,
            next_uid: 1,
            ..Default::default()
        }
    }

    pub fn config(&self) -> ContractConfig {
        self.config
    }

    /// Registers a resource with its owner and access price. Setup-time
    /// operation, not a transaction.
    pub fn register_resource(&mut self, resource: Address, owner: Address, price: u64) {
        self.resources.insert(resource, Resource { owner, price });
    }

    pub fn resource(&self, resource: &Address) -> Option<&Resource> {
        self.resources.get(resource)
    }

    pub fn resources(&self) -> &BTreeMap<Address, Resource> {
        &self.resources
    }

    pub fn feedback_state(&self) -> &FeedbackState {
        &self.feedback
    }

    pub fn provider(&self, provider: &Address) -> Option<&ProviderRecord> {
        self.providers.get(provider)
    }

    pub fn providers(&self) -> &BTreeMap<Address, ProviderRecord> {
        &self.providers
    }

    /// Dispatches one transaction. `sender` has already paid the gas fee.
    pub fn execute(
        &mut self,
        env: &mut ExecEnv<'_>,
        sender: &Address,
        payload: &TxPayload,
    ) -> Result<Vec<EventPayload>, ContractError> {
        match payload {
            TxPayload::AccessRequest { resource, payment } => self
                .exec_access_request(env, sender, resource, *payment)
                .map(|e| vec![e]),
            TxPayload::ReviewSubmission { submitter, uid, rating } => self
                .exec_review_submission(sender, submitter, *uid, *rating)
                .map(|e| vec![e]),
            TxPayload::ScoreQuery { provider, service, fee } => self
                .exec_score_query(env, sender, provider, service, *fee)
                .map(|e| vec![e]),
            TxPayload::ScoreUpdate { service, score } => self
                .exec_score_update(env.block_number, sender, service, *score)
                .map(|e| vec![e]),
            TxPayload::ProviderRegistration { fee, empty_score } => {
                self.register_provider(sender, *fee, *empty_score)?;
                Ok(Vec::new())
            }
            TxPayload::Transfer { to, amount } => {
                if !env.balances.contains_key(to) {
                    return Err(ContractError::UnknownRecipient { recipient: to.clone() });
                }
                env.ensure_funds(sender, *amount)?;
                env.transfer(sender, to, *amount);
                Ok(Vec::new())
            }
        }
    }

    pub fn exec_access_request(
        &mut self,
        env: &mut ExecEnv<'_>,
        sender: &Address,
        resource: &Address,
        payment: u64,
    ) -> Result<EventPayload, ContractError> {
        let res = self
            .resources
            .get(resource)
            .ok_or_else(|| ContractError::UnknownResource {
                resource: resource.clone(),
            })?;
        if payment < res.price {
            return Err(ContractError::InsufficientPayment {
                paid: payment,
                price: res.price,
            });
        }
        env.ensure_funds(sender, payment)?;
        let owner = res.owner.clone();
        if !env.balances.contains_key(&owner) {
            return Err(ContractError::UnknownRecipient { recipient: owner });
        }
        env.transfer(sender, &owner, payment);
        let uid = self.next_uid;
        self.next_uid += 1;
        self.feedback.valid_interactions.insert(
            uid,
            InteractionRecord {
                user: sender.clone(),
                resource: resource.clone(),
            },
        );
        Ok(EventPayload::Interaction {
            user: sender.clone(),
            resource: resource.clone(),
            uid,
        })
    }

    /// The feedback check: the interaction exists, the submitter is the
    /// account that interacted (and signed the transaction), and the rating
    /// lies in `0..=max_rating`.
    pub fn exec_review_submission(
        &mut self,
        sender: &Address,
        submitter: &Address,
        uid: u64,
        rating: i64,
    ) -> Result<EventPayload, ContractError> {
        let record = self
            .feedback
            .valid_interactions
            .get(&uid)
            .ok_or(ContractError::NoSuchInteraction { uid })?;
        if &record.user != submitter || sender != submitter {
            return Err(ContractError::SubmitterMismatch {
                uid,
                submitter: submitter.clone(),
            });
        }
        let max = self.config.max_rating;
        let rating = u8::try_from(rating)
            .ok()
            .filter(|r| *r <= max)
            .ok_or(ContractError::RatingOutOfRange { rating, max })?;
        let delegator = record.resource.clone();
        *self.feedback.review_counts.entry(uid).or_insert(0) += 1;
        Ok(EventPayload::Feedback {
            submitter: submitter.clone(),
            delegator,
            rating,
            uid,
        })
    }

    pub fn exec_score_query(
        &mut self,
        env: &mut ExecEnv<'_>,
        sender: &Address,
        provider: &Address,
        service: &Service,
        fee: u64,
    ) -> Result<EventPayload, ContractError> {
        let record = self
            .providers
            .get(provider)
            .ok_or_else(|| ContractError::UnknownProvider {
                provider: provider.clone(),
            })?;
        if fee < record.fee {
            return Err(ContractError::InsufficientFee {
                paid: fee,
                fee: record.fee,
            });
        }
        env.ensure_funds(sender, fee)?;
        let (score, as_of_block) = match record.cached_scores.get(service) {
            Some(c) => (c.score, Some(c.as_of_block)),
            None => (record.empty_score, None),
        };
        env.transfer(sender, provider, fee);
        Ok(EventPayload::ScoreResponse {
            provider: provider.clone(),
            recipient: sender.clone(),
            service: service.clone(),
            score,
            as_of_block,
        })
    }

    pub fn exec_score_update(
        &mut self,
        block_number: u64,
        provider: &Address,
        service: &Service,
        score: f64,
    ) -> Result<EventPayload, ContractError> {
        let record = self
            .providers
            .get_mut(provider)
            .ok_or_else(|| ContractError::UnknownProvider {
                provider: provider.clone(),
            })?;
        if !(0.0..=1.0).contains(&score) {
            return Err(ContractError::ScoreOutOfRange {
                score: score.to_string(),
            });
        }
        record.cached_scores.insert(
            service.clone(),
            CachedScore {
                score,
                as_of_block: block_number,
            },
        );
        Ok(EventPayload::ScoreUpdate {
            provider: provider.clone(),
            service: service.clone(),
            score,
        })
    }

    pub fn register_provider(
        &mut self,
        provider: &Address,
        fee: u64,
        empty_score: f64,
    ) -> Result<&ProviderRecord, ContractError> {
        if self.providers.contains_key(provider) {
            return Err(ContractError::AlreadyRegistered {
                provider: provider.clone(),
            });
        }
        if !(0.0..=1.0).contains(&empty_score) {
            return Err(ContractError::ScoreOutOfRange {
                score: empty_score.to_string(),
            });
        }
        Ok(self.providers.entry(provider.clone()).or_insert(ProviderRecord {
            provider: provider.clone(),
            fee,
            empty_score,
            cached_scores: BTreeMap::new(),
        }))
    }
}

/// A feedback event without a matching same-submitter interaction.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unbacked feedback at block {block} index {index} (uid {uid})")]
pub struct UnbackedFeedback {
    pub block: u64,
    pub index: u32,
    pub uid: u64,
}

/// Full-chain scan: every feedback event references an interaction sealed
/// at or before it whose user equals the feedback submitter.
pub fn scan_unbacked_feedback(chain: &Chain) -> Vec<UnbackedFeedback> {
    let mut users: BTreeMap<u64, &Address> = BTreeMap::new();
    let mut out = Vec::new();
    for ev in chain.events() {
        match &ev.payload {
            EventPayload::Interaction { user, uid, .. } => {
                users.insert(*uid, user);
            }
            EventPayload::Feedback { submitter, uid, .. } if users.get(uid) != Some(&submitter) => {
                out.push(UnbackedFeedback {
                    block: ev.block_number,
                    index: ev.index_in_block,
                    uid: *uid,
                });
            }
            _ => {}
        }
    }
    out
}

/// Every cached score must come from a score-update event of the provider
/// that owns the cache, with the same value.
pub fn cache_provenance_holds(state: &ContractState, chain: &Chain) -> bool {
    let mut last: BTreeMap<(&Address, &Service), f64> = BTreeMap::new();
    for ev in chain.events() {
        if let EventPayload::ScoreUpdate {
            provider,
            service,
            score,
        } = &ev.payload
        {
            last.insert((provider, service), *score);
        }
    }
    state.providers.values().all(|p| {
        p.cached_scores.iter().all(|(svc, c)| {
            last.get(&(&p.provider, svc))
                .is_some_and(|s| s.to_bits() == c.score.to_bits())
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env_with(balances: &mut BTreeMap<Address, u64>) -> ExecEnv<'_> {
        ExecEnv {
            block_number: 1,
            balances,
        }
    }

    fn setup() -> (ContractState, BTreeMap<Address, u64>) {
        let mut st = ContractState::new(ContractConfig::default());
        st.register_resource("printer".into(), "owner".into(), 10);
        let mut bal = BTreeMap::new();
        bal.insert(Address::from("u"), 100);
        bal.insert(Address::from("v"), 100);
        bal.insert(Address::from("owner"), 0);
        bal.insert(Address::from("tp"), 0);
        (st, bal)
    }

    #[test]
    fn access_pays_owner_and_emits_fresh_uids() {
        let (mut st, mut bal) = setup();
        let u = Address::from("u");
        let p = Address::from("printer");
        let e1 = st.exec_access_request(&mut env_with(&mut bal), &u, &p, 10).unwrap();
        let e2 = st.exec_access_request(&mut env_with(&mut bal), &u, &p, 10).unwrap();
        assert_eq!(e1.uid(), Some(1));
        assert_eq!(e2.uid(), Some(2));
        assert_eq!(bal[&Address::from("owner")], 20);
        assert_eq!(bal[&u], 80);
        assert_eq!(st.feedback_state().valid_interactions.len(), 2);
    }

    #[test]
    fn access_underpaid_or_unknown_resource() {
        let (mut st, mut bal) = setup();
        let u = Address::from("u");
        let err = st
            .exec_access_request(&mut env_with(&mut bal), &u, &"printer".into(), 9)
            .unwrap_err();
        assert_eq!(err, ContractError::InsufficientPayment { paid: 9, price: 10 });
        let err = st
            .exec_access_request(&mut env_with(&mut bal), &u, &"scanner".into(), 10)
            .unwrap_err();
        assert!(matches!(err, ContractError::UnknownResource { .. }));
        assert!(st.feedback_state().valid_interactions.is_empty());
        assert_eq!(bal[&u], 100);
    }

    #[test]
    fn review_checks() {
        let (mut st, mut bal) = setup();
        let u = Address::from("u");
        let v = Address::from("v");
        st.exec_access_request(&mut env_with(&mut bal), &u, &"printer".into(), 10)
            .unwrap();

        let ev = st.exec_review_submission(&u, &u, 1, 1).unwrap();
        assert_eq!(
            ev,
            EventPayload::Feedback {
                submitter: u.clone(),
                delegator: "printer".into(),
                rating: 1,
                uid: 1
            }
        );
        assert!(matches!(
            st.exec_review_submission(&v, &v, 1, 1),
            Err(ContractError::SubmitterMismatch { .. })
        ));
        // v signing a review that claims to come from u
        assert!(matches!(
            st.exec_review_submission(&v, &u, 1, 1),
            Err(ContractError::SubmitterMismatch { .. })
        ));
        assert_eq!(
            st.exec_review_submission(&u, &u, 7, 1),
            Err(ContractError::NoSuchInteraction { uid: 7 })
        );
        assert!(matches!(
            st.exec_review_submission(&u, &u, 1, 6),
            Err(ContractError::RatingOutOfRange { rating: 6, .. })
        ));
        assert!(matches!(
            st.exec_review_submission(&u, &u, 1, -1),
            Err(ContractError::RatingOutOfRange { .. })
        ));
        st.exec_review_submission(&u, &u, 1, 5).unwrap();
        assert_eq!(st.feedback_state().review_counts[&1], 2);
    }

    #[test]
    fn provider_registry_and_queries() {
        let (mut st, mut bal) = setup();
        let tp = Address::from("tp");
        let u = Address::from("u");
        let svc = Service::from("printer");
        st.register_provider(&tp, 2, 0.5).unwrap();
        assert!(matches!(
            st.register_provider(&tp, 2, 0.5),
            Err(ContractError::AlreadyRegistered { .. })
        ));
        st.register_provider(&"free".into(), 0, 0.5).unwrap();

        // no cached score yet: the empty-trace convention
        let ev = st.exec_score_query(&mut env_with(&mut bal), &u, &tp, &svc, 2).unwrap();
        assert!(matches!(ev, EventPayload::ScoreResponse { score, as_of_block: None, .. } if score == 0.5));
        assert_eq!(bal[&tp], 2);

        assert!(matches!(
            st.exec_score_query(&mut env_with(&mut bal), &u, &tp, &svc, 1),
            Err(ContractError::InsufficientFee { paid: 1, fee: 2 })
        ));
        assert!(matches!(
            st.exec_score_query(&mut env_with(&mut bal), &u, &"nobody".into(), &svc, 2),
            Err(ContractError::UnknownProvider { .. })
        ));

        st.exec_score_update(3, &tp, &svc, 0.75).unwrap();
        let ev = st.exec_score_query(&mut env_with(&mut bal), &u, &tp, &svc, 2).unwrap();
        assert!(matches!(ev, EventPayload::ScoreResponse { score, as_of_block: Some(3), .. } if score == 0.75));

        assert!(matches!(
            st.exec_score_update(3, &u, &svc, 0.5),
            Err(ContractError::UnknownProvider { .. })
        ));
        assert!(matches!(
            st.exec_score_update(3, &tp, &svc, 1.2),
            Err(ContractError::ScoreOutOfRange { .. })
        ));
        assert!(matches!(
            st.exec_score_update(3, &tp, &svc, f64::NAN),
            Err(ContractError::ScoreOutOfRange { .. })
        ));
    }
}
