use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::RangeInclusive;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::codec;
use super::IncludedTx;
use crate::{Address, LogicalTime, Service};

/// 32-byte block digest, hex encoded in dumps.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(Digest(out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    InteractionEvent,
    FeedbackEvent,
    ScoreUpdateEvent,
    ScoreResponseEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventPayload {
    /// Proof of a paid resource access.
    Interaction { user: Address, resource: Address, uid: u64 },
    /// A validated review. `delegator` is the resource the interaction used.
    Feedback {
        submitter: Address,
        delegator: Address,
        rating: u8,
        uid: u64,
    },
    ScoreUpdate {
        provider: Address,
        service: Service,
        score: f64,
    },
    /// Score delivered to the paying `recipient`.
    ScoreResponse {
        provider: Address,
        recipient: Address,
        service: Service,
        score: f64,
        as_of_block: Option<u64>,
    },
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::Interaction { .. } => EventKind::InteractionEvent,
            EventPayload::Feedback { .. } => EventKind::FeedbackEvent,
            EventPayload::ScoreUpdate { .. } => EventKind::ScoreUpdateEvent,
            EventPayload::ScoreResponse { .. } => EventKind::ScoreResponseEvent,
        }
    }

    pub fn uid(&self) -> Option<u64> {
        match self {
            EventPayload::Interaction { uid, .. } | EventPayload::Feedback { uid, .. } => Some(*uid),
            _ => None,
        }
    }

    fn mentions(&self, addr: &Address) -> bool {
        match self {
            EventPayload::Interaction { user, resource, .. } => user == addr || resource == addr,
            EventPayload::Feedback {
                submitter, delegator, ..
            } => submitter == addr || delegator == addr,
            EventPayload::ScoreUpdate { provider, service, .. } => provider == addr || service.address() == addr,
            EventPayload::ScoreResponse {
                provider,
                recipient,
                service,
                ..
            } => provider == addr || recipient == addr || service.address() == addr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub block_number: u64,
    pub index_in_block: u32,
    pub payload: EventPayload,
}

impl LedgerEvent {
    pub fn time(&self) -> LogicalTime {
        LogicalTime::new(self.block_number, self.index_in_block)
    }

    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub number: u64,
    pub parent_hash: Digest,
    pub timestamp: u64,
    pub gas_used: u64,
    pub transactions: Vec<IncludedTx>,
    pub events: Vec<LedgerEvent>,
    pub hash: Digest,
}

impl Block {
    /// Seals a block, computing its hash from the other fields.
    pub fn seal(
        number: u64,
        parent_hash: Digest,
        timestamp: u64,
        transactions: Vec<IncludedTx>,
        events: Vec<LedgerEvent>,
    ) -> Block {
        let gas_used = transactions.iter().map(|t| t.gas_used).sum();
        let hash = codec::block_digest(number, &parent_hash, timestamp, &transactions, &events);
        Block {
            number,
            parent_hash,
            timestamp,
            gas_used,
            transactions,
            events,
            hash,
        }
    }

    pub fn genesis(timestamp: u64) -> Block {
        Block::seal(0, Digest::ZERO, timestamp, Vec::new(), Vec::new())
    }

    pub fn recompute_hash(&self) -> Digest {
        codec::block_digest(
            self.number,
            &self.parent_hash,
            self.timestamp,
            &self.transactions,
            &self.events,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    EmptyChain,
    BadGenesis,
    NumberMismatch { expected: u64, found: u64 },
    HashMismatch,
    ParentHashMismatch,
    NonIncreasingTimestamp { previous: u64, found: u64 },
    EventPosition { index: usize },
    GasMismatch { declared: u64, summed: u64 },
    DuplicateUid(u64),
}

/// First integrity violation found by [`Chain::verify`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("chain violation at block {block}: {kind:?}")]
pub struct ChainViolation {
    pub block: u64,
    pub kind: ViolationKind,
}

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

/// Filter for [`Chain::query_events`]. Empty fields match everything.
#[derive(Debug, Clone, Default)]
pub struct EventFilter {
    pub kind: Option<EventKind>,
    pub address: Option<Address>,
    pub uid: Option<u64>,
    pub block_range: Option<RangeInclusive<u64>>,
}

impl EventFilter {
    pub fn kind(kind: EventKind) -> Self {
        EventFilter {
            kind: Some(kind),
            ..Default::default()
        }
    }

    pub fn uid(uid: u64) -> Self {
        EventFilter {
            uid: Some(uid),
            ..Default::default()
        }
    }

    pub fn matches(&self, ev: &LedgerEvent) -> bool {
        self.kind.is_none_or(|k| ev.kind() == k)
            && self.uid.is_none_or(|u| ev.payload.uid() == Some(u))
            && self.address.as_ref().is_none_or(|a| ev.payload.mentions(a))
            && self.block_range.as_ref().is_none_or(|r| r.contains(&ev.block_number))
    }
}

/// An immutable sequence of sealed blocks. Cloning is cheap and yields a
/// snapshot that later appends on the original do not affect.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Chain {
    blocks: Vec<Arc<Block>>,
}

impl Chain {
    pub fn from_blocks(blocks: Vec<Block>) -> Chain {
        Chain {
            blocks: blocks.into_iter().map(Arc::new).collect(),
        }
    }

    pub(crate) fn push(&mut self, block: Block) -> Arc<Block> {
        let block = Arc::new(block);
        self.blocks.push(Arc::clone(&block));
        block
    }

    pub fn blocks(&self) -> &[Arc<Block>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn head(&self) -> Option<&Arc<Block>> {
        self.blocks.last()
    }

    pub fn block(&self, number: u64) -> Option<&Arc<Block>> {
        self.blocks.get(number as usize)
    }

    /// Mutable access for building tamper fixtures; production code never
    /// mutates sealed blocks.
    pub fn block_mut_for_tamper(&mut self, number: u64) -> Option<&mut Block> {
        self.blocks.get_mut(number as usize).map(Arc::make_mut)
    }

    pub fn events(&self) -> impl Iterator<Item = &LedgerEvent> {
        self.blocks.iter().flat_map(|b| b.events.iter())
    }

    pub fn query_events(&self, filter: &EventFilter) -> Vec<LedgerEvent> {
        let blocks: &[Arc<Block>] = match &filter.block_range {
            Some(r) => {
                let lo = (*r.start() as usize).min(self.blocks.len());
                let hi = (r.end().saturating_add(1) as usize).clamp(lo, self.blocks.len());
                &self.blocks[lo..hi]
            }
            None => &self.blocks,
        };
        blocks
            .iter()
            .flat_map(|b| b.events.iter())
            .filter(|ev| filter.matches(ev))
            .cloned()
            .collect()
    }

    /// Checks hash links, recomputed hashes, timestamps, event positions,
    /// gas totals and global uid uniqueness. Returns the first violation.
    pub fn verify(&self) -> Result<(), ChainViolation> {
        let Some(genesis) = self.blocks.first() else {
            return Err(ChainViolation {
                block: 0,
                kind: ViolationKind::EmptyChain,
            });
        };
        let fail = |block: u64, kind| Err(ChainViolation { block, kind });
        if genesis.number != 0
            || genesis.parent_hash != Digest::ZERO
            || !genesis.transactions.is_empty()
            || !genesis.events.is_empty()
        {
            return fail(0, ViolationKind::BadGenesis);
        }
        let mut uids = BTreeSet::new();
        let mut prev: Option<&Block> = None;
        for (n, block) in self.blocks.iter().enumerate() {
            let n = n as u64;
            if block.number != n {
                return fail(
                    n,
                    ViolationKind::NumberMismatch {
                        expected: n,
                        found: block.number,
                    },
                );
            }
            if block.recompute_hash() != block.hash {
                return fail(n, ViolationKind::HashMismatch);
            }
            if let Some(p) = prev {
                if block.parent_hash != p.hash {
                    return fail(n, ViolationKind::ParentHashMismatch);
                }
                if block.timestamp <= p.timestamp {
                    return fail(
                        n,
                        ViolationKind::NonIncreasingTimestamp {
                            previous: p.timestamp,
                            found: block.timestamp,
                        },
                    );
                }
            }
            for (i, ev) in block.events.iter().enumerate() {
                if ev.block_number != n || ev.index_in_block as usize != i {
                    return fail(n, ViolationKind::EventPosition { index: i });
                }
                if let EventPayload::Interaction { uid, .. } = ev.payload {
                    if !uids.insert(uid) {
                        return fail(n, ViolationKind::DuplicateUid(uid));
                    }
                }
            }
            let summed: u64 = block.transactions.iter().map(|t| t.gas_used).sum();
            if summed != block.gas_used {
                return fail(
                    n,
                    ViolationKind::GasMismatch {
                        declared: block.gas_used,
                        summed,
                    },
                );
            }
            prev = Some(block);
        }
        Ok(())
    }

    /// Re-seals every block from `from` onwards so hashes and parent links
    /// are consistent again. Only useful for building forged fixtures.
    pub fn reseal_from(&mut self, from: u64) {
        for n in from as usize..self.blocks.len() {
            let parent = if n == 0 { Digest::ZERO } else { self.blocks[n - 1].hash };
            let b = Arc::make_mut(&mut self.blocks[n]);
            b.parent_hash = parent;
            b.gas_used = b.transactions.iter().map(|t| t.gas_used).sum();
            b.hash = b.recompute_hash();
        }
    }

    /// Writes one JSON block object per line. Field order follows
    /// [`Block`]: number, parent_hash, timestamp, gas_used, transactions,
    /// events, hash.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for b in &self.blocks {
            serde_json::to_writer(&mut w, b.as_ref())?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Chain, DumpError> {
        let mut blocks = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let b: Block = serde_json::from_str(&line).map_err(|source| DumpError::Parse { line: i + 1, source })?;
            blocks.push(b);
        }
        Ok(Chain::from_blocks(blocks))
    }
}
