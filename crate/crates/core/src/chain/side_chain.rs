//! One side chain per task: a root block followed by status blocks and a
//! final block after which the chain accepts nothing.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::block::{AssignType, Block, CftxIndex, Header, TranState, Transaction, VersionCode};
use super::codec::Digest;
use crate::amount::Cftx;
use crate::ids::{NodeId, TaskId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("task does not comply with the block format: {0}")]
    Compliance(String),
    #[error("side chain `{0}` is closed")]
    Closed(TaskId),
    #[error("assignment `{assign_id}` cannot move from {from} to {to}")]
    Transition {
        assign_id: String,
        from: TranState,
        to: TranState,
    },
    #[error("unknown assignment `{0}`")]
    UnknownAssignment(String),
    #[error("assignments still open: {0:?}")]
    OpenAssignments(Vec<String>),
    #[error("assignments can only close in the final block")]
    PrematureClose,
    #[error("expected height {expected}, got {got}")]
    Height { expected: u64, got: u64 },
    #[error("parent hash {got} does not match tip {expected}")]
    Linkage { expected: Digest, got: Digest },
    #[error("block timestamp {got} precedes parent timestamp {parent}")]
    TimeRegression { parent: u64, got: u64 },
    #[error("block roots or assignment count do not match its transactions")]
    NotSealed,
    #[error("block changes the set of tracked assignments")]
    AssignmentSet,
    #[error("block changes the tasking node or task handler")]
    Participants,
}

/// One assignment of a task as submitted by the tasking node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentSpec {
    pub assign_id: String,
    pub assign_type: AssignType,
    pub assign_wealth: Cftx,
    /// Resource node (or token recipient) the assignment is addressed to.
    pub to: NodeId,
    pub value: Cftx,
    #[serde(default)]
    pub data: Vec<u8>,
    pub t_timer: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub tnad: NodeId,
    pub thad: NodeId,
    pub ts: u64,
    pub b_timer: u64,
    pub cftx_index: CftxIndex,
    pub assignments: Vec<AssignmentSpec>,
}

/// Builds the root block: height 0, zero parent, one initiation transaction per assignment.
pub fn propose_root_block(spec: &TaskSpec) -> Result<Block, ChainError> {
    let bad = |m: &str| Err(ChainError::Compliance(m.to_string()));
    if spec.task_id.as_str().is_empty() {
        return bad("missing task id");
    }
    if spec.tnad.is_empty() {
        return bad("missing tasking-node address");
    }
    if spec.thad.is_empty() {
        return bad("missing task-handler address");
    }
    if spec.assignments.is_empty() {
        return bad("task has no assignments");
    }
    if !spec.cftx_index.t_relevancy.is_finite() {
        return bad("task relevancy is not finite");
    }
    if spec.cftx_index.task_wealth.is_negative() {
        return bad("negative task wealth");
    }
    let mut seen = BTreeSet::new();
    for a in &spec.assignments {
        if a.assign_id.is_empty() {
            return bad("empty assignment id");
        }
        if !seen.insert(a.assign_id.as_str()) {
            return Err(ChainError::Compliance(format!(
                "duplicate assignment `{}`",
                a.assign_id
            )));
        }
        if a.to.is_empty() {
            return Err(ChainError::Compliance(format!(
                "assignment `{}` has no recipient",
                a.assign_id
            )));
        }
        if a.value.is_negative() || a.assign_wealth.is_negative() {
            return Err(ChainError::Compliance(format!(
                "assignment `{}` has a negative amount",
                a.assign_id
            )));
        }
    }
    let transactions = spec
        .assignments
        .iter()
        .enumerate()
        .map(|(i, a)| Transaction {
            assign_type: a.assign_type,
            assign_id: a.assign_id.clone(),
            assign_wealth: a.assign_wealth,
            tran_state: TranState::Initiation,
            from: spec.tnad.clone(),
            to: a.to.clone(),
            value: a.value,
            data: a.data.clone(),
            signature: Vec::new(),
            gas: 0,
            gas_price: Cftx::ZERO,
            nonce: i as u64,
            t_timer: a.t_timer,
        })
        .collect();
    let mut block = Block {
        header: Header {
            height: 0,
            parent_hash: Digest::ZERO,
            ts: spec.ts,
            tnad: spec.tnad.clone(),
            thad: spec.thad.clone(),
            epoch: 0,
            b_timer: spec.b_timer,
            assign_num: 0,
            state_root: Digest::ZERO,
            tx_root: Digest::ZERO,
            receipts_root: Digest::ZERO,
        },
        cftx_index: spec.cftx_index,
        transactions,
        votes: Vec::new(),
        version_code: VersionCode::default(),
    };
    block.seal();
    Ok(block)
}

/// A requested change to one assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusUpdate {
    pub assign_id: String,
    pub state: TranState,
    /// Reassigns the assignment to another resource node.
    #[serde(default)]
    pub to: Option<NodeId>,
    /// Replaces the payload, e.g. with a result digest.
    #[serde(default)]
    pub data: Option<Vec<u8>>,
}

impl StatusUpdate {
    pub fn new(assign_id: impl Into<String>, state: TranState) -> Self {
        Self {
            assign_id: assign_id.into(),
            state,
            to: None,
            data: None,
        }
    }
}

fn all_terminal(block: &Block) -> bool {
    block.transactions.iter().all(|t| t.tran_state.is_terminal())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideChain {
    id: TaskId,
    blocks: Vec<Block>,
    closed: bool,
}

impl SideChain {
    /// Starts a chain from a validated root block.
    pub fn new(id: TaskId, root: Block) -> Result<Self, ChainError> {
        if root.header.height != 0 {
            return Err(ChainError::Height {
                expected: 0,
                got: root.header.height,
            });
        }
        if !root.header.parent_hash.is_zero() {
            return Err(ChainError::Linkage {
                expected: Digest::ZERO,
                got: root.header.parent_hash,
            });
        }
        if !root.is_sealed() {
            return Err(ChainError::NotSealed);
        }
        if root.transactions.is_empty() || root.transactions.iter().any(|t| t.tran_state != TranState::Initiation) {
            return Err(ChainError::Compliance(
                "root block must hold initiation transactions only".into(),
            ));
        }
        Ok(Self {
            id,
            blocks: vec![root],
            closed: false,
        })
    }

    pub fn id(&self) -> &TaskId {
        &self.id
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn root(&self) -> &Block {
        &self.blocks[0]
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain has a root")
    }

    pub fn height(&self) -> u64 {
        self.tip().header.height
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn state_of(&self, assign_id: &str) -> Option<TranState> {
        self.tip().transaction(assign_id).map(|t| t.tran_state)
    }

    fn next_block(&self, ts: u64, updates: &[StatusUpdate]) -> Result<Block, ChainError> {
        if self.closed {
            return Err(ChainError::Closed(self.id.clone()));
        }
        let tip = self.tip();
        let mut txs = tip.transactions.clone();
        for u in updates {
            let tx = txs
                .iter_mut()
                .find(|t| t.assign_id == u.assign_id)
                .ok_or_else(|| ChainError::UnknownAssignment(u.assign_id.clone()))?;
            if !tx.tran_state.can_move_to(u.state) {
                return Err(ChainError::Transition {
                    assign_id: u.assign_id.clone(),
                    from: tx.tran_state,
                    to: u.state,
                });
            }
            tx.tran_state = u.state;
            if let Some(to) = &u.to {
                tx.to = to.clone();
            }
            if let Some(data) = &u.data {
                tx.data = data.clone();
            }
        }
        let mut block = Block {
            header: Header {
                height: tip.header.height + 1,
                parent_hash: tip.hash(),
                ts: ts.max(tip.header.ts),
                epoch: tip.header.epoch + 1,
                ..tip.header.clone()
            },
            cftx_index: tip.cftx_index,
            transactions: txs,
            votes: Vec::new(),
            version_code: tip.version_code.clone(),
        };
        block.seal();
        Ok(block)
    }

    /// Builds (without appending) the next status block.
    pub fn propose_status_block(&self, ts: u64, updates: &[StatusUpdate]) -> Result<Block, ChainError> {
        let block = self.next_block(ts, updates)?;
        if block.transactions.iter().any(|t| t.tran_state == TranState::Close) || all_terminal(&block) {
            return Err(ChainError::PrematureClose);
        }
        Ok(block)
    }

    /// Builds (without appending) the final block: applies `updates`, then
    /// moves every completed assignment to close.
    pub fn propose_final_block(&self, ts: u64, updates: &[StatusUpdate]) -> Result<Block, ChainError> {
        let mut block = self.next_block(ts, updates)?;
        let open: Vec<String> = block
            .transactions
            .iter()
            .filter(|t| !matches!(t.tran_state, TranState::Completion | TranState::Abandoned))
            .map(|t| t.assign_id.clone())
            .collect();
        if !open.is_empty() {
            return Err(ChainError::OpenAssignments(open));
        }
        for t in &mut block.transactions {
            if t.tran_state == TranState::Completion {
                t.tran_state = TranState::Close;
            }
        }
        block.seal();
        Ok(block)
    }

    /// Validates and appends a block built elsewhere (possibly carrying votes).
    /// A block whose assignments are all closed or abandoned closes the chain.
    pub fn append_block(&mut self, block: Block) -> Result<(), ChainError> {
        if self.closed {
            return Err(ChainError::Closed(self.id.clone()));
        }
        let tip = self.tip();
        let h = &block.header;
        if h.height != tip.header.height + 1 {
            return Err(ChainError::Height {
                expected: tip.header.height + 1,
                got: h.height,
            });
        }
        let expected = tip.hash();
        if h.parent_hash != expected {
            return Err(ChainError::Linkage {
                expected,
                got: h.parent_hash,
            });
        }
        if h.ts < tip.header.ts {
            return Err(ChainError::TimeRegression {
                parent: tip.header.ts,
                got: h.ts,
            });
        }
        if h.tnad != tip.header.tnad || h.thad != tip.header.thad {
            return Err(ChainError::Participants);
        }
        if !block.is_sealed() {
            return Err(ChainError::NotSealed);
        }
        let ids = |b: &Block| b.transactions.iter().map(|t| t.assign_id.clone()).collect::<Vec<_>>();
        if ids(&block) != ids(tip) {
            return Err(ChainError::AssignmentSet);
        }
        let final_block = all_terminal(&block);
        for (old, new) in tip.transactions.iter().zip(&block.transactions) {
            let (from, to) = (old.tran_state, new.tran_state);
            if !from.can_move_to(to) {
                return Err(ChainError::Transition {
                    assign_id: new.assign_id.clone(),
                    from,
                    to,
                });
            }
            if to == TranState::Close && !final_block {
                return Err(ChainError::PrematureClose);
            }
        }
        self.closed = final_block;
        self.blocks.push(block);
        Ok(())
    }

    pub fn append_status_block(&mut self, ts: u64, updates: &[StatusUpdate]) -> Result<&Block, ChainError> {
        let block = self.propose_status_block(ts, updates)?;
        self.append_block(block)?;
        Ok(self.tip())
    }

    pub fn close_task(&mut self, ts: u64, updates: &[StatusUpdate]) -> Result<&Block, ChainError> {
        let block = self.propose_final_block(ts, updates)?;
        self.append_block(block)?;
        Ok(self.tip())
    }

    /// Re-walks the whole chain: heights, hash links, seals and transitions.
    pub fn verify(&self) -> Result<(), ChainError> {
        let mut replay = SideChain::new(self.id.clone(), self.blocks[0].clone())?;
        for b in &self.blocks[1..] {
            replay.append_block(b.clone())?;
        }
        if replay.closed != self.closed {
            return Err(ChainError::Compliance("closed flag disagrees with blocks".into()));
        }
        Ok(())
    }

    /// One JSON object per block, one block per line.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            out.push_str(&serde_json::json!({"chain": self.id, "hash": b.hash(), "block": b}).to_string());
            out.push('\n');
        }
        out
    }
}
