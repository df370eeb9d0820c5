//! Fork choice between competing branches from the same height.

use super::block::Block;
use super::codec::Digest;
use crate::amount::Cftx;

/// A forked block followed by its descendants.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub blocks: Vec<Block>,
}

impl Branch {
    pub fn new(blocks: Vec<Block>) -> Self {
        Self { blocks }
    }

    pub fn total_task_wealth(&self) -> Cftx {
        self.blocks.iter().map(|b| b.cftx_index.task_wealth).sum()
    }

    pub fn tip_hash(&self) -> Digest {
        self.blocks.last().map_or(Digest::ZERO, Block::hash)
    }
}

/// Index of the branch with the most task wealth; ties go to the smaller tip hash.
/// `None` only for an empty candidate list.
pub fn fork_select(candidates: &[Branch]) -> Option<usize> {
    candidates
        .iter()
        .map(|b| (b.total_task_wealth(), b.tip_hash()))
        .enumerate()
        .min_by(|(_, (wa, ha)), (_, (wb, hb))| wb.cmp(wa).then_with(|| ha.cmp(hb)))
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::block::tests::reference_block;
    use proptest::prelude::*;

    fn blk(wealth: i64, salt: u64) -> Block {
        let mut b = reference_block();
        b.cftx_index.task_wealth = Cftx::whole(wealth);
        b.header.ts = salt;
        b
    }

    #[test]
    fn examples() {
        let a = Branch::new(vec![blk(5, 1), blk(3, 2)]);
        let b = Branch::new(vec![blk(4, 3), blk(5, 4)]);
        assert_eq!(fork_select(&[a.clone(), b.clone()]), Some(1));
        assert_eq!(fork_select(std::slice::from_ref(&a)), Some(0));
        assert_eq!(fork_select(&[]), None);

        let x = Branch::new(vec![blk(4, 10)]);
        let y = Branch::new(vec![blk(4, 11)]);
        let want = if x.tip_hash() < y.tip_hash() { 0 } else { 1 };
        assert_eq!(fork_select(&[x.clone(), y.clone()]), Some(want));
        assert_eq!(fork_select(&[y, x]), Some(1 - want));
    }

    proptest! {
        #[test]
        fn picks_maximum_sum(branches in prop::collection::vec(prop::collection::vec(0i64..20, 1..4), 1..6)) {
            let bs: Vec<Branch> = branches
                .iter()
                .enumerate()
                .map(|(i, ws)| Branch::new(ws.iter().enumerate().map(|(j, w)| blk(*w, (i * 10 + j) as u64)).collect()))
                .collect();
            let chosen = fork_select(&bs).unwrap();
            let sums: Vec<i64> = branches.iter().map(|ws| ws.iter().sum()).collect();
            let best = *sums.iter().max().unwrap();
            prop_assert_eq!(sums[chosen], best);
            for (i, b) in bs.iter().enumerate() {
                if sums[i] == best {
                    prop_assert!(bs[chosen].tip_hash() <= b.tip_hash());
                }
            }
        }
    }
}
