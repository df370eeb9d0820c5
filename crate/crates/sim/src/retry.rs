//! Acknowledgment timers for assignment distribution.

use blockcloud_core::NodeId;

use crate::config::ExhaustedPolicy;

/// Acknowledgment progress of one assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AckState {
    /// Acceptors needed before the assignment can move on.
    pub needed: usize,
    /// Nodes that acknowledged, in arrival order. They are never released.
    pub acked: Vec<NodeId>,
    /// Every node the assignment was ever sent to.
    pub contacted: Vec<NodeId>,
    /// Timer expiries so far.
    pub round: u32,
    pub max_rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RetryAction {
    Proceed,
    /// Send the assignment to these extra nodes and re-arm the timer.
    Redistribute(Vec<NodeId>),
    /// Retries are used up; the tasking node decides.
    QueryTasker,
    Abandon,
}

fn top_up(state: &AckState, ranked: &[NodeId]) -> Vec<NodeId> {
    let missing = state.needed.saturating_sub(state.acked.len());
    ranked
        .iter()
        .filter(|n| !state.contacted.contains(n))
        .take(missing)
        .cloned()
        .collect()
}

/// Next step when the acknowledgment timer of an assignment fires.
/// `ranked` is the full relevancy-ordered list of eligible resource nodes.
pub fn assignment_retry(state: &AckState, ranked: &[NodeId]) -> RetryAction {
    if state.acked.len() >= state.needed {
        return RetryAction::Proceed;
    }
    if state.round >= state.max_rounds {
        return RetryAction::QueryTasker;
    }
    let extra = top_up(state, ranked);
    if extra.is_empty() {
        RetryAction::QueryTasker
    } else {
        RetryAction::Redistribute(extra)
    }
}

/// The tasking node's answer once retries are exhausted. A redistribution
/// reaches nodes never contacted before; with none left the assignment is
/// abandoned.
pub fn tasker_decision(policy: ExhaustedPolicy, state: &AckState, ranked: &[NodeId]) -> RetryAction {
    match policy {
        ExhaustedPolicy::Abandon => RetryAction::Abandon,
        ExhaustedPolicy::Redistribute => {
            let extra = top_up(state, ranked);
            if extra.is_empty() {
                RetryAction::Abandon
            } else {
                RetryAction::Redistribute(extra)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn ids(names: &[&str]) -> Vec<NodeId> {
        names.iter().map(|n| NodeId::new(*n)).collect()
    }

    fn state(needed: usize, acked: &[&str], contacted: &[&str], round: u32) -> AckState {
        AckState {
            needed,
            acked: ids(acked),
            contacted: ids(contacted),
            round,
            max_rounds: 3,
        }
    }

    #[test]
    fn enough_acks_proceed() {
        let s = state(2, &["c0", "c1"], &["c0", "c1"], 1);
        assert_eq!(assignment_retry(&s, &ids(&["c0", "c1", "c2"])), RetryAction::Proceed);
    }

    #[test]
    fn zero_acks_exhausted_follows_tasker() {
        let ranked = ids(&["c0", "c1", "c2"]);
        let s = state(1, &[], &["c0", "c1", "c2"], 3);
        assert_eq!(assignment_retry(&s, &ranked), RetryAction::QueryTasker);
        assert_eq!(
            tasker_decision(ExhaustedPolicy::Abandon, &s, &ranked),
            RetryAction::Abandon
        );
        // nobody left to ask
        assert_eq!(
            tasker_decision(ExhaustedPolicy::Redistribute, &s, &ranked),
            RetryAction::Abandon
        );
    }

    #[test]
    fn partial_acks_top_up_only() {
        let s = state(3, &["c0"], &["c0", "c1", "c2"], 0);
        let ranked = ids(&["c0", "c1", "c2", "c3", "c4", "c5"]);
        assert_eq!(
            assignment_retry(&s, &ranked),
            RetryAction::Redistribute(ids(&["c3", "c4"]))
        );
    }

    #[test]
    fn no_fresh_nodes_asks_tasker_early() {
        let s = state(1, &[], &["c0"], 0);
        assert_eq!(assignment_retry(&s, &ids(&["c0"])), RetryAction::QueryTasker);
    }

    proptest! {
        // the redistribution set equals the first `needed - acked` ranked nodes
        // of ranked \ contacted, computed here with set difference
        #[test]
        fn top_up_is_ranked_set_difference(
            n in 1usize..12,
            contacted_mask in any::<u16>(),
            acked_mask in any::<u16>(),
            needed in 1usize..6,
        ) {
            let ranked: Vec<NodeId> = (0..n).map(|i| NodeId::new(format!("r{i:02}"))).collect();
            let contacted: Vec<NodeId> = ranked.iter().enumerate()
                .filter(|(i, _)| contacted_mask >> i & 1 == 1).map(|(_, x)| x.clone()).collect();
            let acked: Vec<NodeId> = contacted.iter().enumerate()
                .filter(|(i, _)| acked_mask >> i & 1 == 1).map(|(_, x)| x.clone()).collect();
            let s = AckState { needed, acked: acked.clone(), contacted: contacted.clone(), round: 0, max_rounds: 3 };
            let contacted_set: BTreeSet<&NodeId> = contacted.iter().collect();
            let fresh: Vec<NodeId> = ranked.iter().filter(|r| !contacted_set.contains(r)).cloned().collect();
            let want: Vec<NodeId> = fresh.into_iter().take(needed.saturating_sub(acked.len())).collect();
            let got = assignment_retry(&s, &ranked);
            if acked.len() >= needed {
                prop_assert_eq!(got, RetryAction::Proceed);
            } else if want.is_empty() {
                prop_assert_eq!(got, RetryAction::QueryTasker);
            } else {
                prop_assert_eq!(got, RetryAction::Redistribute(want));
            }
        }
    }
}
