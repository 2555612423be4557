use std::fmt;

use serde::{Deserialize, Serialize};

use crate::contracts::ContractError;
use crate::{Address, Service};

/// Fixed per-kind gas costs.
pub mod gas {
    pub const ACCESS_REQUEST: u64 = 50_000;
    pub const REVIEW_SUBMISSION: u64 = 80_000;
    pub const SCORE_QUERY: u64 = 30_000;
    pub const SCORE_UPDATE: u64 = 40_000;
    pub const PROVIDER_REGISTRATION: u64 = 60_000;
    pub const TRANSFER: u64 = 21_000;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxKind {
    AccessRequest,
    ReviewSubmission,
    ScoreQuery,
    ScoreUpdate,
    ProviderRegistration,
    Transfer,
}

impl TxKind {
    pub const fn gas_cost(self) -> u64 {
        match self {
            TxKind::AccessRequest => gas::ACCESS_REQUEST,
            TxKind::ReviewSubmission => gas::REVIEW_SUBMISSION,
            TxKind::ScoreQuery => gas::SCORE_QUERY,
            TxKind::ScoreUpdate => gas::SCORE_UPDATE,
            TxKind::ProviderRegistration => gas::PROVIDER_REGISTRATION,
            TxKind::Transfer => gas::TRANSFER,
        }
    }

    pub(crate) const fn code(self) -> u8 {
        match self {
            TxKind::AccessRequest => 1,
            TxKind::ReviewSubmission => 2,
            TxKind::ScoreQuery => 3,
            TxKind::ScoreUpdate => 4,
            TxKind::ProviderRegistration => 5,
            TxKind::Transfer => 6,
        }
    }
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Kind-specific transaction body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TxPayload {
    AccessRequest {
        resource: Address,
        payment: u64,
    },
    ReviewSubmission {
        submitter: Address,
        uid: u64,
        rating: i64,
    },
    ScoreQuery {
        provider: Address,
        service: Service,
        fee: u64,
    },
    ScoreUpdate {
        service: Service,
        score: f64,
    },
    ProviderRegistration {
        fee: u64,
        empty_score: f64,
    },
    Transfer {
        to: Address,
        amount: u64,
    },
}

impl TxPayload {
    pub fn kind(&self) -> TxKind {
        match self {
            TxPayload::AccessRequest { .. } => TxKind::AccessRequest,
            TxPayload::ReviewSubmission { .. } => TxKind::ReviewSubmission,
            TxPayload::ScoreQuery { .. } => TxKind::ScoreQuery,
            TxPayload::ScoreUpdate { .. } => TxKind::ScoreUpdate,
            TxPayload::ProviderRegistration { .. } => TxKind::ProviderRegistration,
            TxPayload::Transfer { .. } => TxKind::Transfer,
        }
    }

    /// Tokens moved from the sender on top of the gas fee.
    pub fn payment(&self) -> u64 {
        match self {
            TxPayload::AccessRequest { payment, .. } => *payment,
            TxPayload::ScoreQuery { fee, .. } => *fee,
            TxPayload::Transfer { amount, .. } => *amount,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub sender: Address,
    pub payload: TxPayload,
}

impl Transaction {
    pub fn new(sender: impl Into<Address>, payload: TxPayload) -> Self {
        Transaction {
            sender: sender.into(),
            payload,
        }
    }

    pub fn kind(&self) -> TxKind {
        self.payload.kind()
    }

    pub fn access(sender: impl Into<Address>, resource: impl Into<Address>, payment: u64) -> Self {
        Self::new(
            sender,
            TxPayload::AccessRequest {
                resource: resource.into(),
                payment,
            },
        )
    }

    /// A review signed by its own submitter.
    pub fn review(submitter: impl Into<Address>, uid: u64, rating: i64) -> Self {
        let submitter = submitter.into();
        Self::new(
            submitter.clone(),
            TxPayload::ReviewSubmission { submitter, uid, rating },
        )
    }

    pub fn score_query(
        sender: impl Into<Address>,
        provider: impl Into<Address>,
        service: impl Into<Service>,
        fee: u64,
    ) -> Self {
        Self::new(
            sender,
            TxPayload::ScoreQuery {
                provider: provider.into(),
                service: service.into(),
                fee,
            },
        )
    }

    pub fn score_update(provider: impl Into<Address>, service: impl Into<Service>, score: f64) -> Self {
        Self::new(
            provider,
            TxPayload::ScoreUpdate {
                service: service.into(),
                score,
            },
        )
    }

    pub fn register_provider(provider: impl Into<Address>, fee: u64, empty_score: f64) -> Self {
        Self::new(provider, TxPayload::ProviderRegistration { fee, empty_score })
    }

    pub fn transfer(sender: impl Into<Address>, to: impl Into<Address>, amount: u64) -> Self {
        Self::new(sender, TxPayload::Transfer { to: to.into(), amount })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "error")]
pub enum TxStatus {
    Success,
    /// Execution failed; gas was burned and no event was emitted.
    Reverted(ContractError),
}

impl TxStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, TxStatus::Success)
    }
}

/// A transaction as sealed in a block, with its gas receipt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncludedTx {
    pub tx: Transaction,
    pub gas_used: u64,
    pub fee: u64,
    pub status: TxStatus,
}
