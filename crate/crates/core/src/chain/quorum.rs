//! Two-stage vote counting with a ⌊2n/3⌋ + 1 quorum.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::block::{Vote, VoteType};
use super::codec::Digest;
use super::sign::Verifier;
use crate::ids::NodeId;

pub fn quorum_threshold(n: usize) -> usize {
    2 * n / 3 + 1
}

/// Largest number of faulty validators a set of `n` tolerates.
pub fn max_faulty(n: usize) -> usize {
    n.saturating_sub(1) / 3
}

/// Whether `votes` of `n` validators reach quorum. Both stages share the
/// threshold; [`VoteTally`] enforces that commits count only after prepares.
pub fn quorum(n: usize, votes: usize, _stage: VoteType) -> bool {
    votes >= quorum_threshold(n)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VoteRejected {
    #[error("`{0}` is not a validator for this block")]
    NotValidator(NodeId),
    #[error("vote for height {got}, tally is for height {expected}")]
    WrongHeight { expected: u64, got: u64 },
    #[error("bad signature or height pair from `{0}`")]
    BadSignature(NodeId),
    #[error("duplicate vote from `{0}`")]
    Duplicate(NodeId),
}

/// Two signed votes by one validator for different blocks at one height and stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Equivocation {
    pub validator: NodeId,
    pub first: Vote,
    pub second: Vote,
}

impl Equivocation {
    pub fn verify(&self, verifier: &dyn Verifier) -> bool {
        self.first.from == self.validator
            && self.second.from == self.validator
            && self.first.hv == self.second.hv
            && self.first.vote_type == self.second.vote_type
            && self.first.vote_hash != self.second.vote_hash
            && self.first.verify(verifier)
            && self.second.verify(verifier)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TallyEvent {
    Prepared(Digest),
    Committed(Digest),
    Equivocation(Box<Equivocation>),
}

/// Vote counter for one height of one side chain, as seen by one node.
#[derive(Debug, Clone)]
pub struct VoteTally {
    height: u64,
    validators: BTreeSet<NodeId>,
    prepares: BTreeMap<Digest, BTreeSet<NodeId>>,
    commits: BTreeMap<Digest, BTreeSet<NodeId>>,
    first: BTreeMap<(NodeId, VoteType), Vote>,
    prepared: Option<Digest>,
    committed: Option<Digest>,
}

impl VoteTally {
    pub fn new(height: u64, validators: impl IntoIterator<Item = NodeId>) -> Self {
        Self {
            height,
            validators: validators.into_iter().collect(),
            prepares: BTreeMap::new(),
            commits: BTreeMap::new(),
            first: BTreeMap::new(),
            prepared: None,
            committed: None,
        }
    }

    pub fn n(&self) -> usize {
        self.validators.len()
    }

    pub fn prepared(&self) -> Option<Digest> {
        self.prepared
    }

    pub fn committed(&self) -> Option<Digest> {
        self.committed
    }

    /// The next height may start once this one has a prepare quorum.
    pub fn can_pipeline(&self) -> bool {
        self.prepared.is_some()
    }

    pub fn prepare_count(&self, d: &Digest) -> usize {
        self.prepares.get(d).map_or(0, BTreeSet::len)
    }

    pub fn commit_count(&self, d: &Digest) -> usize {
        self.commits.get(d).map_or(0, BTreeSet::len)
    }

    pub fn add(&mut self, vote: &Vote, verifier: &dyn Verifier) -> Result<Vec<TallyEvent>, VoteRejected> {
        if !self.validators.contains(&vote.from) {
            return Err(VoteRejected::NotValidator(vote.from.clone()));
        }
        if vote.hv != self.height {
            return Err(VoteRejected::WrongHeight {
                expected: self.height,
                got: vote.hv,
            });
        }
        if !vote.verify(verifier) {
            return Err(VoteRejected::BadSignature(vote.from.clone()));
        }
        let mut events = Vec::new();
        let key = (vote.from.clone(), vote.vote_type);
        match self.first.get(&key) {
            Some(prev) if prev.vote_hash == vote.vote_hash => {
                return Err(VoteRejected::Duplicate(vote.from.clone()));
            }
            Some(prev) => {
                events.push(TallyEvent::Equivocation(Box::new(Equivocation {
                    validator: vote.from.clone(),
                    first: prev.clone(),
                    second: vote.clone(),
                })));
            }
            None => {
                self.first.insert(key, vote.clone());
            }
        }
        let book = match vote.vote_type {
            VoteType::Prepare => &mut self.prepares,
            VoteType::Commit => &mut self.commits,
        };
        book.entry(vote.vote_hash).or_default().insert(vote.from.clone());

        let n = self.n();
        if self.prepared.is_none() && quorum(n, self.prepare_count(&vote.vote_hash), VoteType::Prepare) {
            self.prepared = Some(vote.vote_hash);
            events.push(TallyEvent::Prepared(vote.vote_hash));
        }
        if let (Some(p), None) = (self.prepared, self.committed) {
            if quorum(n, self.commit_count(&p), VoteType::Commit) {
                self.committed = Some(p);
                events.push(TallyEvent::Committed(p));
            }
        }
        Ok(events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::codec::sha256;
    use crate::chain::sign::{KeyedDigestSigner, KeyedDigestVerifier};

    fn vote(who: &str, d: Digest, t: VoteType) -> Vote {
        Vote::signed(&KeyedDigestSigner::new(NodeId::new(who)), "PBFT", d, 2, t)
    }

    fn validators() -> Vec<NodeId> {
        ["v1", "v2", "v3", "v4"].into_iter().map(NodeId::new).collect()
    }

    #[test]
    fn thresholds() {
        assert!(quorum(4, 3, VoteType::Prepare));
        assert!(!quorum(4, 2, VoteType::Prepare));
        assert_eq!(max_faulty(4), 1);
        for f in 0..20 {
            let n = 3 * f + 1;
            assert_eq!(max_faulty(n), f);
            assert_eq!(quorum_threshold(n), 2 * f + 1);
            // two quorums always share an honest validator
            assert!(2 * quorum_threshold(n) - n > f);
        }
    }

    #[test]
    fn commits_wait_for_prepare_quorum() {
        let d = sha256(&[b"block"]);
        let mut t = VoteTally::new(2, validators());
        let v = KeyedDigestVerifier;
        for who in ["v1", "v2", "v3"] {
            assert!(t.add(&vote(who, d, VoteType::Commit), &v).unwrap().is_empty());
        }
        assert_eq!(t.committed(), None);
        assert!(!t.can_pipeline());
        t.add(&vote("v1", d, VoteType::Prepare), &v).unwrap();
        t.add(&vote("v2", d, VoteType::Prepare), &v).unwrap();
        let ev = t.add(&vote("v3", d, VoteType::Prepare), &v).unwrap();
        assert_eq!(ev, vec![TallyEvent::Prepared(d), TallyEvent::Committed(d)]);
        assert!(t.can_pipeline());
    }

    #[test]
    fn rejects_and_detects() {
        let d = sha256(&[b"x"]);
        let e = sha256(&[b"y"]);
        let v = KeyedDigestVerifier;
        let mut t = VoteTally::new(2, validators());
        assert!(matches!(
            t.add(&vote("zz", d, VoteType::Prepare), &v),
            Err(VoteRejected::NotValidator(_))
        ));
        let mut forged = vote("v1", d, VoteType::Prepare);
        forged.vote_hash = e;
        assert!(matches!(t.add(&forged, &v), Err(VoteRejected::BadSignature(_))));
        t.add(&vote("v1", d, VoteType::Prepare), &v).unwrap();
        assert!(matches!(
            t.add(&vote("v1", d, VoteType::Prepare), &v),
            Err(VoteRejected::Duplicate(_))
        ));
        let ev = t.add(&vote("v1", e, VoteType::Prepare), &v).unwrap();
        match &ev[0] {
            TallyEvent::Equivocation(x) => assert!(x.verify(&v)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
