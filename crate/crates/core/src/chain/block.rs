//! Block, transaction and vote records with their canonical encoding.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::codec::{sha256, Digest, Encoder};
use super::merkle::merkle_root;
use super::sign::{Signer, Verifier};
use crate::amount::Cftx;
use crate::ids::NodeId;

/// What an assignment asks for. `Null` marks a token-only transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignType {
    Computing,
    Storage,
    Null,
}

impl AssignType {
    fn code(self) -> u8 {
        match self {
            AssignType::Computing => 1,
            AssignType::Storage => 2,
            AssignType::Null => 0,
        }
    }
}

/// Assignment lifecycle. The four ordered states advance one step at a time;
/// `Abandoned` is a terminal exit from any state before `Close`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranState {
    Initiation,
    Acceptance,
    Completion,
    Close,
    Abandoned,
}

impl TranState {
    pub const LIFECYCLE: [TranState; 4] = [
        TranState::Initiation,
        TranState::Acceptance,
        TranState::Completion,
        TranState::Close,
    ];

    fn code(self) -> u8 {
        match self {
            TranState::Initiation => 1,
            TranState::Acceptance => 2,
            TranState::Completion => 3,
            TranState::Close => 4,
            TranState::Abandoned => 0xff,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, TranState::Close | TranState::Abandoned)
    }

    /// The next lifecycle state, if any.
    pub fn successor(self) -> Option<TranState> {
        match self {
            TranState::Initiation => Some(TranState::Acceptance),
            TranState::Acceptance => Some(TranState::Completion),
            TranState::Completion => Some(TranState::Close),
            TranState::Close | TranState::Abandoned => None,
        }
    }

    /// Whether an assignment may move from `self` to `next` in one block.
    /// Staying put is always allowed.
    pub fn can_move_to(self, next: TranState) -> bool {
        next == self || self.successor() == Some(next) || (next == TranState::Abandoned && !self.is_terminal())
    }
}

impl fmt::Display for TranState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TranState::Initiation => "initiation",
            TranState::Acceptance => "acceptance",
            TranState::Completion => "completion",
            TranState::Close => "close",
            TranState::Abandoned => "abandoned",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub height: u64,
    pub parent_hash: Digest,
    pub ts: u64,
    pub tnad: NodeId,
    pub thad: NodeId,
    pub epoch: u64,
    pub b_timer: u64,
    pub assign_num: u32,
    pub state_root: Digest,
    pub tx_root: Digest,
    pub receipts_root: Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CftxIndex {
    pub global_wealth: Cftx,
    pub task_wealth: Cftx,
    pub th_wealth: Cftx,
    pub t_relevancy: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub assign_type: AssignType,
    pub assign_id: String,
    pub assign_wealth: Cftx,
    pub tran_state: TranState,
    pub from: NodeId,
    pub to: NodeId,
    pub value: Cftx,
    #[serde(with = "hex_bytes")]
    pub data: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
    pub gas: u64,
    pub gas_price: Cftx,
    pub nonce: u64,
    pub t_timer: u64,
}

impl Transaction {
    fn encode_into(&self, e: &mut Encoder) {
        e.u8(self.assign_type.code())
            .str(&self.assign_id)
            .i64(self.assign_wealth.micros())
            .u8(self.tran_state.code())
            .str(self.from.as_str())
            .str(self.to.as_str())
            .i64(self.value.micros())
            .bytes(&self.data)
            .bytes(&self.signature)
            .u64(self.gas)
            .i64(self.gas_price.micros())
            .u64(self.nonce)
            .u64(self.t_timer);
    }

    pub fn hash(&self) -> Digest {
        let mut e = Encoder::new();
        self.encode_into(&mut e);
        sha256(&[&e.finish()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteType {
    Prepare,
    Commit,
}

impl VoteType {
    fn code(self) -> u8 {
        match self {
            VoteType::Prepare => 1,
            VoteType::Commit => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub type_bft: String,
    pub from: NodeId,
    pub vote_hash: Digest,
    pub hv: u64,
    pub hvs: u64,
    pub vote_type: VoteType,
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
}

impl Vote {
    /// Builds and signs a vote for the block at height `hv`, whose nearest
    /// ancestor is at `hv − 1` (root votes use `hv = hvs = 0`).
    pub fn signed(signer: &dyn Signer, type_bft: &str, vote_hash: Digest, hv: u64, vote_type: VoteType) -> Vote {
        let mut v = Vote {
            type_bft: type_bft.to_string(),
            from: signer.id().clone(),
            vote_hash,
            hv,
            hvs: hv.saturating_sub(1),
            vote_type,
            signature: Vec::new(),
        };
        v.signature = signer.sign(&v.signing_bytes());
        v
    }

    fn encode_unsigned(&self, e: &mut Encoder) {
        e.str(&self.type_bft)
            .str(self.from.as_str())
            .digest(&self.vote_hash)
            .u64(self.hv)
            .u64(self.hvs)
            .u8(self.vote_type.code());
    }

    fn encode_into(&self, e: &mut Encoder) {
        self.encode_unsigned(e);
        e.bytes(&self.signature);
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.str("vote");
        self.encode_unsigned(&mut e);
        e.finish()
    }

    /// Checks the height relation and the signature.
    pub fn verify(&self, verifier: &dyn Verifier) -> bool {
        let heights_ok = self.hv > self.hvs || (self.hv == 0 && self.hvs == 0);
        heights_ok && verifier.verify(&self.from, &self.signing_bytes(), &self.signature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VersionCode {
    pub hash: Digest,
    #[serde(with = "hex_bytes")]
    pub code: Vec<u8>,
    pub ini_block: u64,
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
    pub version: u32,
    pub nonce: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub header: Header,
    pub cftx_index: CftxIndex,
    pub transactions: Vec<Transaction>,
    pub votes: Vec<Vote>,
    pub version_code: VersionCode,
}

impl Block {
    pub fn hash(&self) -> Digest {
        canonical_hash(self)
    }

    pub fn compute_tx_root(&self) -> Digest {
        let leaves: Vec<Digest> = self.transactions.iter().map(Transaction::hash).collect();
        merkle_root(&leaves)
    }

    pub fn distinct_assignments(&self) -> usize {
        self.transactions
            .iter()
            .map(|t| t.assign_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Recomputes `tx_root` and `assign_num` from the transactions.
    pub fn seal(&mut self) {
        self.header.tx_root = self.compute_tx_root();
        self.header.assign_num = u32::try_from(self.distinct_assignments()).expect("assignment count fits u32");
    }

    pub fn is_sealed(&self) -> bool {
        self.header.tx_root == self.compute_tx_root() && self.header.assign_num as usize == self.distinct_assignments()
    }

    pub fn transaction(&self, assign_id: &str) -> Option<&Transaction> {
        self.transactions.iter().find(|t| t.assign_id == assign_id)
    }

    fn encode_into(&self, e: &mut Encoder, with_votes: bool) {
        let h = &self.header;
        e.u64(h.height)
            .digest(&h.parent_hash)
            .u64(h.ts)
            .str(h.tnad.as_str())
            .str(h.thad.as_str())
            .u64(h.epoch)
            .u64(h.b_timer)
            .u32(h.assign_num)
            .digest(&h.state_root)
            .digest(&h.tx_root)
            .digest(&h.receipts_root);
        let c = &self.cftx_index;
        e.i64(c.global_wealth.micros())
            .i64(c.task_wealth.micros())
            .i64(c.th_wealth.micros())
            .f64(c.t_relevancy);
        e.len(self.transactions.len());
        for t in &self.transactions {
            t.encode_into(e);
        }
        if with_votes {
            e.len(self.votes.len());
            for v in &self.votes {
                v.encode_into(e);
            }
        } else {
            e.len(0);
        }
        let vc = &self.version_code;
        e.digest(&vc.hash)
            .bytes(&vc.code)
            .u64(vc.ini_block)
            .bytes(&vc.signature)
            .u32(vc.version)
            .u64(vc.nonce);
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.encode_into(&mut e, true);
        e.finish()
    }
}

/// SHA-256 of the full canonical encoding, votes included.
pub fn canonical_hash(block: &Block) -> Digest {
    sha256(&[&block.canonical_bytes()])
}

/// Digest that validators vote on: the canonical hash with the vote list empty.
pub fn proposal_digest(block: &Block) -> Digest {
    let mut e = Encoder::new();
    block.encode_into(&mut e, false);
    sha256(&[&e.finish()])
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::chain::sign::{KeyedDigestSigner, KeyedDigestVerifier};

    pub(crate) fn reference_block() -> Block {
        let tx = |id: &str, state| Transaction {
            assign_type: AssignType::Computing,
            assign_id: id.to_string(),
            assign_wealth: Cftx::whole(25),
            tran_state: state,
            from: NodeId::new("tasker"),
            to: NodeId::new("r1"),
            value: Cftx::from_micros(1_500_000),
            data: vec![0xde, 0xad],
            signature: vec![],
            gas: 21_000,
            gas_price: Cftx::from_micros(3),
            nonce: 7,
            t_timer: 2_000_000,
        };
        let mut b = Block {
            header: Header {
                height: 0,
                parent_hash: Digest::ZERO,
                ts: 1_000,
                tnad: NodeId::new("tasker"),
                thad: NodeId::new("handler"),
                epoch: 0,
                b_timer: 10_000_000,
                assign_num: 0,
                state_root: Digest::ZERO,
                tx_root: Digest::ZERO,
                receipts_root: Digest::ZERO,
            },
            cftx_index: CftxIndex {
                global_wealth: Cftx::whole(100_000),
                task_wealth: Cftx::whole(100),
                th_wealth: Cftx::whole(12),
                t_relevancy: 0.39125,
            },
            transactions: vec![tx("a1", TranState::Initiation), tx("a2", TranState::Initiation)],
            votes: vec![],
            version_code: VersionCode {
                version: 1,
                ..Default::default()
            },
        };
        b.seal();
        b
    }

    #[test]
    fn golden_digest() {
        let b = reference_block();
        assert_eq!(b.header.assign_num, 2);
        assert_eq!(
            canonical_hash(&b).to_hex(),
            "ff79d2ebdc6fefdc1ebe2fbd99bf714f2f78e796058207f48598e3fe7eb87c32"
        );
    }

    #[test]
    fn hash_is_deterministic_and_sensitive() {
        let b = reference_block();
        assert_eq!(canonical_hash(&b), canonical_hash(&b.clone()));
        let mut c = b.clone();
        c.header.ts ^= 1;
        assert_ne!(canonical_hash(&b), canonical_hash(&c));
        let mut d = b.clone();
        d.cftx_index.t_relevancy = f64::from_bits(d.cftx_index.t_relevancy.to_bits() ^ 1);
        assert_ne!(canonical_hash(&b), canonical_hash(&d));
    }

    #[test]
    fn votes_change_hash_but_not_proposal_digest() {
        let mut b = reference_block();
        let before = (canonical_hash(&b), proposal_digest(&b));
        assert_eq!(before.0, before.1);
        let s = KeyedDigestSigner::new(NodeId::new("v1"));
        b.votes.push(Vote::signed(&s, "PBFT", before.1, 0, VoteType::Prepare));
        assert_ne!(canonical_hash(&b), before.0);
        assert_eq!(proposal_digest(&b), before.1);
        assert!(b.votes[0].verify(&KeyedDigestVerifier));
    }

    #[test]
    fn tampered_vote_fails() {
        let s = KeyedDigestSigner::new(NodeId::new("v1"));
        let mut v = Vote::signed(&s, "PBFT", Digest::ZERO, 3, VoteType::Commit);
        assert_eq!(v.hvs, 2);
        assert!(v.verify(&KeyedDigestVerifier));
        v.hv = 4;
        assert!(!v.verify(&KeyedDigestVerifier));
        let mut w = Vote::signed(&s, "PBFT", Digest::ZERO, 3, VoteType::Commit);
        w.hvs = 3;
        assert!(!w.verify(&KeyedDigestVerifier));
    }

    #[test]
    fn lifecycle_moves() {
        use TranState::*;
        assert!(Initiation.can_move_to(Acceptance));
        assert!(!Initiation.can_move_to(Completion));
        assert!(!Completion.can_move_to(Acceptance));
        assert!(Acceptance.can_move_to(Abandoned));
        assert!(!Close.can_move_to(Abandoned));
        assert!(!Abandoned.can_move_to(Close));
    }

    #[test]
    fn json_roundtrip() {
        let b = reference_block();
        let s = serde_json::to_string(&b).unwrap();
        let back: Block = serde_json::from_str(&s).unwrap();
        assert_eq!(canonical_hash(&back), canonical_hash(&b));
    }
}
