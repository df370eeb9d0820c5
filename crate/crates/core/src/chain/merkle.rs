//! Binary Merkle tree over 32-byte leaves.
//!
//! Interior nodes hash `0x01 || left || right`; an unpaired node is promoted
//! unchanged to the next level. The empty tree has the all-zero root.

use super::codec::{sha256, Digest};

pub fn merkle_root(leaves: &[Digest]) -> Digest {
    if leaves.is_empty() {
        return Digest::ZERO;
    }
    let mut level: Vec<Digest> = leaves.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [l, r] => sha256(&[&[1u8], &l.0, &r.0]),
                [single] => *single,
                _ => unreachable!(),
            })
            .collect();
    }
    level[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(i: u8) -> Digest {
        sha256(&[&[i]])
    }

    #[test]
    fn small_trees() {
        assert_eq!(merkle_root(&[]), Digest::ZERO);
        assert_eq!(merkle_root(&[leaf(1)]), leaf(1));
        let ab = sha256(&[&[1], &leaf(1).0, &leaf(2).0]);
        assert_eq!(merkle_root(&[leaf(1), leaf(2)]), ab);
        let abc = sha256(&[&[1], &ab.0, &leaf(3).0]);
        assert_eq!(merkle_root(&[leaf(1), leaf(2), leaf(3)]), abc);
    }

    #[test]
    fn order_matters() {
        assert_ne!(merkle_root(&[leaf(1), leaf(2)]), merkle_root(&[leaf(2), leaf(1)]));
    }
}
