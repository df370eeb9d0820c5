//! A task side chain from root to close, certified by a 4-validator committee.

use blockcloud_core::chain::{
    flatten, proposal_digest, propose_root_block, quorum_threshold, reconstruct, AssignType, AssignmentSpec, Block,
    CftxIndex, KeyedDigestSigner, KeyedDigestVerifier, SideChain, StatusUpdate, TallyEvent, TaskSpec, TranState, Vote,
    VoteTally, VoteType,
};
use blockcloud_core::{Cftx, NodeId, TaskId};

fn spec(task: &str, ts: u64, assigns: &[&str]) -> TaskSpec {
    TaskSpec {
        task_id: TaskId::new(task),
        tnad: NodeId::new("tasker-0"),
        thad: NodeId::new("super-1"),
        ts,
        b_timer: 60_000_000,
        cftx_index: CftxIndex {
            global_wealth: Cftx::whole(8_000),
            task_wealth: Cftx::whole(50),
            th_wealth: Cftx::whole(500),
            t_relevancy: 0.4575,
        },
        assignments: assigns
            .iter()
            .map(|a| AssignmentSpec {
                assign_id: a.to_string(),
                assign_type: AssignType::Computing,
                assign_wealth: Cftx::whole(10),
                to: NodeId::new("computing-0"),
                value: Cftx::whole(10),
                data: Vec::new(),
                t_timer: 5_000_000,
            })
            .collect(),
    }
}

fn validators() -> Vec<NodeId> {
    (0..4).map(|i| NodeId::new(format!("super-{i}"))).collect()
}

/// Runs prepare and commit rounds for `block` with the first `voters`
/// validators and attaches the commit certificate.
fn certify(block: &mut Block, voters: usize) -> bool {
    let d = proposal_digest(block);
    let h = block.header.height;
    let mut tally = VoteTally::new(h, validators());
    let mut committed = false;
    for phase in [VoteType::Prepare, VoteType::Commit] {
        for v in validators().into_iter().take(voters) {
            let vote = Vote::signed(&KeyedDigestSigner::new(v), "pbft", d, h, phase);
            for ev in tally.add(&vote, &KeyedDigestVerifier).unwrap() {
                if let TallyEvent::Committed(c) = ev {
                    assert_eq!(c, d);
                    committed = true;
                }
            }
            if phase == VoteType::Commit {
                block.votes.push(vote);
            }
        }
    }
    committed
}

#[test]
fn lifecycle_walk_closes_chain() {
    let mut root = propose_root_block(&spec("t1", 0, &["a0", "a1"])).unwrap();
    assert!(certify(&mut root, quorum_threshold(4)));
    let mut chain = SideChain::new(TaskId::new("t1"), root).unwrap();

    let mut walked = vec![TranState::Initiation];
    let mut ts = 100;
    for state in [TranState::Acceptance, TranState::Completion] {
        let ups = [StatusUpdate::new("a0", state), StatusUpdate::new("a1", state)];
        let mut b = chain.propose_status_block(ts, &ups).unwrap();
        assert!(certify(&mut b, 4));
        chain.append_block(b).unwrap();
        walked.push(chain.state_of("a0").unwrap());
        ts += 100;
    }
    let mut last = chain.propose_final_block(ts, &[]).unwrap();
    assert!(certify(&mut last, 3));
    chain.append_block(last).unwrap();
    walked.push(chain.state_of("a0").unwrap());

    assert_eq!(walked, TranState::LIFECYCLE);
    assert!(chain.is_closed());
    assert_eq!(chain.height(), 3);
    assert!(chain.verify().is_ok());
    assert!(chain.propose_status_block(ts + 1, &[]).is_err());
}

#[test]
fn no_quorum_without_three_of_four() {
    let mut root = propose_root_block(&spec("t1", 0, &["a0"])).unwrap();
    assert!(!certify(&mut root, 2));
}

#[test]
fn skipping_a_step_is_rejected() {
    let chain = SideChain::new(TaskId::new("t1"), propose_root_block(&spec("t1", 0, &["a0"])).unwrap()).unwrap();
    assert!(chain
        .propose_status_block(10, &[StatusUpdate::new("a0", TranState::Close)])
        .is_err());
    assert!(chain
        .propose_status_block(10, &[StatusUpdate::new("a0", TranState::Completion)])
        .is_err());
}

#[test]
fn mixed_completion_and_abandonment_closes() {
    let mut chain = SideChain::new(
        TaskId::new("t2"),
        propose_root_block(&spec("t2", 0, &["a0", "a1"])).unwrap(),
    )
    .unwrap();
    chain
        .append_status_block(
            5,
            &[
                StatusUpdate::new("a0", TranState::Acceptance),
                StatusUpdate::new("a1", TranState::Abandoned),
            ],
        )
        .unwrap();
    chain
        .append_status_block(9, &[StatusUpdate::new("a0", TranState::Completion)])
        .unwrap();
    chain.close_task(12, &[]).unwrap();
    assert!(chain.is_closed());
    assert_eq!(chain.state_of("a0"), Some(TranState::Close));
    assert_eq!(chain.state_of("a1"), Some(TranState::Abandoned));
}

#[test]
fn flatten_interleaves_and_reconstructs() {
    let mut chains = Vec::new();
    for (i, start) in [(0, 0u64), (1, 50)] {
        let id = format!("t{i}");
        let mut c = SideChain::new(
            TaskId::new(&id),
            propose_root_block(&spec(&id, start, &["a0"])).unwrap(),
        )
        .unwrap();
        c.append_status_block(start + 100, &[StatusUpdate::new("a0", TranState::Acceptance)])
            .unwrap();
        chains.push(c);
    }
    let flat = flatten(&chains);
    let order: Vec<(String, u64)> = flat
        .entries
        .iter()
        .map(|e| (e.chain.to_string(), e.block.header.ts))
        .collect();
    assert_eq!(
        order,
        [("t0", 0), ("t1", 50), ("t0", 100), ("t1", 150)].map(|(c, t)| (c.to_string(), t))
    );
    assert_eq!(reconstruct(&flat).unwrap(), chains);
}
