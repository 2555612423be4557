//! Simulated single-producer block ledger.
//!
//! Transactions enter a FIFO pool through [`Ledger::submit`] and are sealed
//! by [`Ledger::produce_block`], which charges gas at the congestion price
//! and runs each transaction through the [`contracts`](crate::contracts)
//! handlers. Blocks are hash-chained over the canonical encoding in
//! [`codec`]; see that module for the byte layout.

mod chain;
pub mod codec;
mod tx;

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chain::{
    Block, Chain, ChainViolation, Digest, DumpError, EventFilter, EventKind, EventPayload, LedgerEvent, ViolationKind,
};
pub use tx::{gas, IncludedTx, Transaction, TxKind, TxPayload, TxStatus};

use crate::contracts::{ContractConfig, ContractState, ExecEnv};
use crate::{Address, LogicalTime};

pub const DEFAULT_BLOCK_INTERVAL: u64 = 12;
pub const DEFAULT_MAX_TXS_PER_BLOCK: usize = 5000;
pub const DEFAULT_BASE_PRICE: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LedgerConfig {
    /// Minimum simulated seconds between blocks.
    pub block_interval: u64,
    pub block_gas_limit: u64,
    pub max_txs_per_block: usize,
    /// Gas price on an idle network, in token units per gas.
    pub base_price: u64,
    pub genesis_time: u64,
    pub contracts: ContractConfig,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig {
            block_interval: DEFAULT_BLOCK_INTERVAL,
            block_gas_limit: DEFAULT_MAX_TXS_PER_BLOCK as u64 * gas::REVIEW_SUBMISSION,
            max_txs_per_block: DEFAULT_MAX_TXS_PER_BLOCK,
            base_price: DEFAULT_BASE_PRICE,
            genesis_time: 0,
            contracts: ContractConfig::default(),
        }
    }
}

/// Congestion price: `base × (1 + depth/1000)`, rounded up.
pub fn gas_price(base_price: u64, pool_depth: usize) -> u64 {
    let num = base_price as u128 * (1000 + pool_depth as u128);
    num.div_ceil(1000) as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("unknown account {0}")]
    UnknownAccount(Address),
    #[error("account {0} already exists")]
    DuplicateAccount(Address),
    #[error("balance {balance} of {account} cannot cover {needed}")]
    InsufficientBalance {
        account: Address,
        balance: u64,
        needed: u64,
    },
    #[error("block time {now} earlier than {earliest}")]
    BlockTooEarly { now: u64, earliest: u64 },
}

/// Position of an accepted transaction in the submission order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TxTicket(pub u64);

/// A transaction dropped at inclusion because its sender could no longer
/// pay the gas fee.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedTx {
    pub block: u64,
    pub tx: Transaction,
}

#[derive(Debug, Clone)]
pub struct Ledger {
    config: LedgerConfig,
    chain: Chain,
    accounts: BTreeMap<Address, u64>,
    pending: VecDeque<Transaction>,
    contracts: ContractState,
    miner_revenue: u64,
    submitted: u64,
    dropped: Vec<DroppedTx>,
}

impl Ledger {
    pub fn new(config: LedgerConfig) -> Ledger {
        let mut chain = Chain::default();
        chain.push(Block::genesis(config.genesis_time));
        Ledger {
            config,
            chain,
            accounts: BTreeMap::new(),
            pending: VecDeque::new(),
            contracts: ContractState::new(config.contracts),
            miner_revenue: 0,
            submitted: 0,
            dropped: Vec::new(),
        }
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    /// Creates a funded account. Setup-time minting; the only way tokens
    /// enter the system.
    pub fn create_account(&mut self, address: impl Into<Address>, balance: u64) -> Result<(), LedgerError> {
        let address = address.into();
        if self.accounts.contains_key(&address) {
            return Err(LedgerError::DuplicateAccount(address));
        }
        self.accounts.insert(address, balance);
        Ok(())
    }

    /// Registers a resource (service) priced per access, paid to `owner`.
    pub fn register_resource(
        &mut self,
        resource: impl Into<Address>,
        owner: impl Into<Address>,
        price: u64,
    ) -> Result<(), LedgerError> {
        let owner = owner.into();
        if !self.accounts.contains_key(&owner) {
            return Err(LedgerError::UnknownAccount(owner));
        }
        self.contracts.register_resource(resource.into(), owner, price);
        Ok(())
    }

    pub fn balance(&self, address: &Address) -> Option<u64> {
        self.accounts.get(address).copied()
    }

    pub fn accounts(&self) -> &BTreeMap<Address, u64> {
        &self.accounts
    }

    pub fn miner_revenue(&self) -> u64 {
        self.miner_revenue
    }

    /// Sum of all balances plus collected fees.
    pub fn total_supply(&self) -> u128 {
        self.accounts.values().map(|b| *b as u128).sum::<u128>() + self.miner_revenue as u128
    }

    pub fn contracts(&self) -> &ContractState {
        &self.contracts
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    /// Immutable view of the chain as of now.
    pub fn snapshot(&self) -> Chain {
        self.chain.clone()
    }

    pub fn head(&self) -> &Arc<Block> {
        self.chain.head().expect("ledger always holds genesis")
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn dropped(&self) -> &[DroppedTx] {
        &self.dropped
    }

    pub fn gas_price(&self, pool_depth: usize) -> u64 {
        gas_price(self.config.base_price, pool_depth)
    }

    /// Fee the transaction would pay if sealed at the current pool depth.
    pub fn quote_fee(&self, kind: TxKind) -> u64 {
        kind.gas_cost() * self.gas_price(self.pending.len())
    }

    pub fn submit(&mut self, tx: Transaction) -> Result<TxTicket, LedgerError> {
        let balance = self
            .balance(&tx.sender)
            .ok_or_else(|| LedgerError::UnknownAccount(tx.sender.clone()))?;
        let needed = self.quote_fee(tx.kind()).saturating_add(tx.payload.payment());
        if balance < needed {
            return Err(LedgerError::InsufficientBalance {
                account: tx.sender.clone(),
                balance,
                needed,
            });
        }
        self.pending.push_back(tx);
        let ticket = TxTicket(self.submitted);
        self.submitted += 1;
        Ok(ticket)
    }

    /// Earliest timestamp the next block may carry.
    pub fn next_block_time(&self) -> u64 {
        self.head().timestamp + self.config.block_interval
    }

    /// Seals the next block from the front of the pool.
    pub fn produce_block(&mut self, now: u64) -> Result<Arc<Block>, LedgerError> {
        let earliest = self.next_block_time();
        if now < earliest {
            return Err(LedgerError::BlockTooEarly { now, earliest });
        }
        let number = self.head().number + 1;
        let parent_hash = self.head().hash;
        let price = self.gas_price(self.pending.len());

        let mut included = Vec::new();
        let mut events = Vec::new();
        let mut gas_used = 0u64;
        while let Some(front) = self.pending.front() {
            let gas = front.kind().gas_cost();
            if included.len() >= self.config.max_txs_per_block || gas_used + gas > self.config.block_gas_limit {
                break;
            }
            let tx = self.pending.pop_front().expect("front exists");
            let fee = gas * price;
            let balance = self.accounts.get_mut(&tx.sender).expect("submit checked sender");
            if *balance < fee {
                self.dropped.push(DroppedTx { block: number, tx });
                continue;
            }
            *balance -= fee;
            self.miner_revenue += fee;
            gas_used += gas;

            let mut env = ExecEnv {
                block_number: number,
                balances: &mut self.accounts,
            };
            let status = match self.contracts.execute(&mut env, &tx.sender, &tx.payload) {
                Ok(emitted) => {
                    for payload in emitted {
                        let index_in_block = events.len() as u32;
                        events.push(LedgerEvent {
                            block_number: number,
                            index_in_block,
                            payload,
                        });
                    }
                    TxStatus::Success
                }
                Err(e) => TxStatus::Reverted(e),
            };
            included.push(IncludedTx {
                tx,
                gas_used: gas,
                fee,
                status,
            });
        }

        let block = Block::seal(number, parent_hash, now, included, events);
        Ok(self.chain.push(block))
    }

    /// Produces a block at the earliest allowed time.
    pub fn produce_next_block(&mut self) -> Arc<Block> {
        let now = self.next_block_time();
        self.produce_block(now).expect("earliest time is always valid")
    }

    pub fn verify_chain(&self) -> Result<(), ChainViolation> {
        self.chain.verify()
    }

    pub fn query_events(&self, filter: &EventFilter) -> Vec<LedgerEvent> {
        self.chain.query_events(filter)
    }

    /// Logical time of the most recent event, if any.
    pub fn last_event_time(&self) -> Option<LogicalTime> {
        self.chain
            .blocks()
            .iter()
            .rev()
            .find_map(|b| b.events.last().map(|e| e.time()))
    }
}
