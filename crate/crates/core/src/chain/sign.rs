//! Signing interface and the deterministic keyed-digest scheme used by the simulator.
//!
//! The keyed digest identifies who signed what, which is enough to detect
//! equivocation. Anyone who knows a node id can derive its key.

use super::codec::sha256;
use crate::ids::NodeId;

pub trait Signer {
    fn id(&self) -> &NodeId;
    fn sign(&self, msg: &[u8]) -> Vec<u8>;
}

pub trait Verifier {
    fn verify(&self, signer: &NodeId, msg: &[u8], signature: &[u8]) -> bool;
}

fn key_for(id: &NodeId) -> [u8; 32] {
    sha256(&[b"blockcloud-key", id.as_str().as_bytes()]).0
}

#[derive(Debug, Clone)]
pub struct KeyedDigestSigner {
    id: NodeId,
    key: [u8; 32],
}

impl KeyedDigestSigner {
    pub fn new(id: NodeId) -> Self {
        let key = key_for(&id);
        Self { id, key }
    }
}

impl Signer for KeyedDigestSigner {
    fn id(&self) -> &NodeId {
        &self.id
    }

    fn sign(&self, msg: &[u8]) -> Vec<u8> {
        sha256(&[&self.key, msg]).0.to_vec()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KeyedDigestVerifier;

impl Verifier for KeyedDigestVerifier {
    fn verify(&self, signer: &NodeId, msg: &[u8], signature: &[u8]) -> bool {
        sha256(&[&key_for(signer), msg]).0.as_slice() == signature
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_verify() {
        let s = KeyedDigestSigner::new(NodeId::new("v1"));
        let sig = s.sign(b"block");
        assert!(KeyedDigestVerifier.verify(&NodeId::new("v1"), b"block", &sig));
        assert!(!KeyedDigestVerifier.verify(&NodeId::new("v2"), b"block", &sig));
        assert!(!KeyedDigestVerifier.verify(&NodeId::new("v1"), b"other", &sig));
        assert_eq!(sig, s.sign(b"block"));
    }
}
