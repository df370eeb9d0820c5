//! Task side chains: block format, canonical hashing, signatures, quorums,
//! fork choice and flattening into a single ordered chain.

pub mod block;
pub mod codec;
pub mod flatten;
pub mod fork;
pub mod merkle;
pub mod quorum;
pub mod side_chain;
pub mod sign;

pub use block::{
    canonical_hash, proposal_digest, AssignType, Block, CftxIndex, Header, TranState, Transaction, VersionCode, Vote,
    VoteType,
};
pub use codec::{sha256, Digest};
pub use flatten::{flatten, reconstruct, FlatChain, FlatEntry};
pub use fork::{fork_select, Branch};
pub use merkle::merkle_root;
pub use quorum::{max_faulty, quorum, quorum_threshold, Equivocation, TallyEvent, VoteTally};
pub use side_chain::{propose_root_block, AssignmentSpec, ChainError, SideChain, StatusUpdate, TaskSpec};
pub use sign::{KeyedDigestSigner, KeyedDigestVerifier, Signer, Verifier};
