//! Flattening side chains into one time-ordered chain and back.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::block::Block;
use super::codec::Digest;
use super::merkle::merkle_root;
use super::side_chain::{ChainError, SideChain};
use crate::ids::TaskId;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatEntry {
    pub chain: TaskId,
    pub block: Block,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatChain {
    pub entries: Vec<FlatEntry>,
    /// Merkle root over the ordered block hashes.
    pub root: Digest,
}

/// Orders every block by timestamp, then side-chain id, then height.
pub fn flatten(chains: &[SideChain]) -> FlatChain {
    let mut entries: Vec<FlatEntry> = chains
        .iter()
        .flat_map(|c| {
            c.blocks().iter().map(move |b| FlatEntry {
                chain: c.id().clone(),
                block: b.clone(),
            })
        })
        .collect();
    entries.sort_by(|a, b| {
        (a.block.header.ts, &a.chain, a.block.header.height).cmp(&(b.block.header.ts, &b.chain, b.block.header.height))
    });
    let hashes: Vec<Digest> = entries.iter().map(|e| e.block.hash()).collect();
    FlatChain {
        root: merkle_root(&hashes),
        entries,
    }
}

/// Rebuilds and re-validates the side chains, sorted by id.
pub fn reconstruct(flat: &FlatChain) -> Result<Vec<SideChain>, ChainError> {
    let hashes: Vec<Digest> = flat.entries.iter().map(|e| e.block.hash()).collect();
    if merkle_root(&hashes) != flat.root {
        return Err(ChainError::Compliance("flat chain root mismatch".into()));
    }
    let mut chains: BTreeMap<TaskId, SideChain> = BTreeMap::new();
    let mut started = BTreeSet::new();
    for e in &flat.entries {
        match chains.get_mut(&e.chain) {
            Some(c) => c.append_block(e.block.clone())?,
            None => {
                if !started.insert(e.chain.clone()) {
                    unreachable!("chain recorded twice");
                }
                chains.insert(e.chain.clone(), SideChain::new(e.chain.clone(), e.block.clone())?);
            }
        }
    }
    Ok(chains.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::block::TranState::*;
    use crate::chain::side_chain::tests::{chain, spec};
    use crate::chain::side_chain::{propose_root_block, StatusUpdate};
    use proptest::prelude::*;

    #[test]
    fn empty_and_single() {
        let f = flatten(&[]);
        assert!(f.entries.is_empty());
        assert_eq!(f.root, Digest::ZERO);

        let mut c = chain("t", 1);
        c.append_status_block(5, &[StatusUpdate::new("t-a0", Acceptance)])
            .unwrap();
        let f = flatten(std::slice::from_ref(&c));
        let hs: Vec<u64> = f.entries.iter().map(|e| e.block.header.height).collect();
        assert_eq!(hs, vec![0, 1]);
        assert_eq!(reconstruct(&f).unwrap(), vec![c]);
    }

    fn build(task: &str, start: u64, steps: &[u64], close: bool) -> SideChain {
        let s = spec(task, 1, start);
        let mut c = SideChain::new(s.task_id.clone(), propose_root_block(&s).unwrap()).unwrap();
        let id = format!("{task}-a0");
        let lifecycle = [Acceptance, Completion];
        for (i, ts) in steps.iter().enumerate().take(2) {
            c.append_status_block(*ts, &[StatusUpdate::new(id.clone(), lifecycle[i])])
                .unwrap();
        }
        if close && steps.len() >= 2 {
            let ts = steps.get(2).copied().unwrap_or(steps[1]);
            c.close_task(ts, &[]).unwrap();
        }
        c
    }

    #[test]
    fn interleaved_roundtrip() {
        let a = build("a", 0, &[10, 30, 50], true);
        let b = build("b", 5, &[10, 20], false);
        let f = flatten(&[b.clone(), a.clone()]);
        let order: Vec<(String, u64)> = f
            .entries
            .iter()
            .map(|e| (e.chain.to_string(), e.block.header.ts))
            .collect();
        assert_eq!(
            order,
            vec![
                ("a".into(), 0),
                ("b".into(), 5),
                ("a".into(), 10),
                ("b".into(), 10),
                ("b".into(), 20),
                ("a".into(), 30),
                ("a".into(), 50)
            ]
        );
        let back = reconstruct(&f).unwrap();
        assert_eq!(back, vec![a, b]);
        assert!(back[0].is_closed());
    }

    proptest! {
        #[test]
        fn flatten_reconstruct_identity(specs in prop::collection::vec((0u64..50, prop::collection::vec(0u64..20, 0..4), any::<bool>()), 0..5)) {
            let chains: Vec<SideChain> = specs
                .iter()
                .enumerate()
                .map(|(i, (start, gaps, close))| {
                    let mut ts = *start;
                    let steps: Vec<u64> = gaps.iter().map(|g| { ts += g; ts }).collect();
                    build(&format!("c{i}"), *start, &steps, *close)
                })
                .collect();
            let f = flatten(&chains);
            prop_assert_eq!(reconstruct(&f).unwrap(), chains);
        }
    }
}
