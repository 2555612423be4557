//! Canonical byte encoding of block contents for hashing.
//!
//! Layout (all integers big-endian):
//!
//! ```text
//! block   := "TLB1" number:u64 parent:[32] timestamp:u64
//!            ntx:u32 tx* nev:u32 event*
//! tx      := sender:str kind:u8 payload gas_used:u64 fee:u64 status
//! status  := 0x00 | 0x01 error:str          (error = Display text)
//! event   := block:u64 index:u32 tag:u8 fields
//! str     := len:u32 utf8-bytes
//! f64     := IEEE-754 bits as u64
//! opt<T>  := 0x00 | 0x01 T
//! ```
//!
//! Payload and event fields follow the declaration order of their Rust
//! definitions. The encoding is versioned by the leading magic and must not
//! change for a given magic.

use sha2::{Digest as _, Sha256};

use super::{Digest, EventPayload, IncludedTx, LedgerEvent, TxPayload, TxStatus};

const MAGIC: &[u8; 4] = b"TLB1";

#[derive(Default)]
struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn tx(&mut self, itx: &IncludedTx) {
        self.str(itx.tx.sender.as_str());
        self.u8(itx.tx.kind().code());
        match &itx.tx.payload {
            TxPayload::AccessRequest { resource, payment } => {
                self.str(resource.as_str());
                self.u64(*payment);
            }
            TxPayload::ReviewSubmission { submitter, uid, rating } => {
                self.str(submitter.as_str());
                self.u64(*uid);
                self.i64(*rating);
            }
            TxPayload::ScoreQuery { provider, service, fee } => {
                self.str(provider.as_str());
                self.str(service.address().as_str());
                self.u64(*fee);
            }
            TxPayload::ScoreUpdate { service, score } => {
                self.str(service.address().as_str());
                self.f64(*score);
            }
            TxPayload::ProviderRegistration { fee, empty_score } => {
                self.u64(*fee);
                self.f64(*empty_score);
            }
            TxPayload::Transfer { to, amount } => {
                self.str(to.as_str());
                self.u64(*amount);
            }
        }
        self.u64(itx.gas_used);
        self.u64(itx.fee);
        match &itx.status {
            TxStatus::Success => self.u8(0),
            TxStatus::Reverted(e) => {
                self.u8(1);
                self.str(&e.to_string());
            }
        }
    }

    fn event(&mut self, ev: &LedgerEvent) {
        self.u64(ev.block_number);
        self.u32(ev.index_in_block);
        match &ev.payload {
            EventPayload::Interaction { user, resource, uid } => {
                self.u8(1);
                self.str(user.as_str());
                self.str(resource.as_str());
                self.u64(*uid);
            }
            EventPayload::Feedback {
                submitter,
                delegator,
                rating,
                uid,
            } => {
                self.u8(2);
                self.str(submitter.as_str());
                self.str(delegator.as_str());
                self.u8(*rating);
                self.u64(*uid);
            }
            EventPayload::ScoreUpdate {
                provider,
                service,
                score,
            } => {
                self.u8(3);
                self.str(provider.as_str());
                self.str(service.address().as_str());
                self.f64(*score);
            }
            EventPayload::ScoreResponse {
                provider,
                recipient,
                service,
                score,
                as_of_block,
            } => {
                self.u8(4);
                self.str(provider.as_str());
                self.str(recipient.as_str());
                self.str(service.address().as_str());
                self.f64(*score);
                match as_of_block {
                    None => self.u8(0),
                    Some(b) => {
                        self.u8(1);
                        self.u64(*b);
                    }
                }
            }
        }
    }
}

/// Canonical bytes of a block's hashed contents.
pub fn block_bytes(
    number: u64,
    parent_hash: &Digest,
    timestamp: u64,
    transactions: &[IncludedTx],
    events: &[LedgerEvent],
) -> Vec<u8> {
    let mut enc = Encoder::default();
    enc.buf.extend_from_slice(MAGIC);
    enc.u64(number);
    enc.buf.extend_from_slice(&parent_hash.0);
    enc.u64(timestamp);
    enc.u32(transactions.len() as u32);
    for tx in transactions {
        enc.tx(tx);
    }
    enc.u32(events.len() as u32);
    for ev in events {
        enc.event(ev);
    }
    enc.buf
}

/// SHA-256 over [`block_bytes`].
pub fn block_digest(
    number: u64,
    parent_hash: &Digest,
    timestamp: u64,
    transactions: &[IncludedTx],
    events: &[LedgerEvent],
) -> Digest {
    let bytes = block_bytes(number, parent_hash, timestamp, transactions, events);
    let out = Sha256::digest(&bytes);
    let mut d = [0u8; 32];
    d.copy_from_slice(&out);
    Digest(d)
}
