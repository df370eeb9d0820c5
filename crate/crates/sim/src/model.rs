//! Nodes, shards and the signed messages they exchange.

use blockcloud_core::chain::codec::Encoder;
use blockcloud_core::chain::{sha256, Block, Digest, KeyedDigestSigner, Signer, Verifier, Vote};
use blockcloud_core::err::NodeRankingProfile;
use blockcloud_core::{Cftx, NodeId, TaskId};
use serde::Serialize;

use crate::config::{AssignKind, Behavior, Role};

#[derive(Debug, Clone)]
pub struct SimNode {
    pub id: NodeId,
    pub role: Role,
    pub behavior: Behavior,
    pub beneficiary: NodeId,
    pub profile: NodeRankingProfile,
    pub score: f64,
    pub signer: KeyedDigestSigner,
}

/// The validator committee serving one task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Shard {
    pub task: TaskId,
    pub validators: Vec<NodeId>,
    pub handler: NodeId,
    pub open: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestedAssignment {
    pub id: String,
    pub kind: AssignKind,
    pub wealth: Cftx,
    pub value: Cftx,
    pub replicas: usize,
    pub data: Vec<u8>,
    pub t_timer: u64,
}

/// A task as signed by its tasking node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRequest {
    pub task: TaskId,
    pub tasker: NodeId,
    pub wealth: Cftx,
    pub increment: Cftx,
    pub relevancy: f64,
    pub b_timer: u64,
    pub assignments: Vec<RequestedAssignment>,
    pub signature: Vec<u8>,
}

impl TaskRequest {
    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        e.str("task-request")
            .str(self.task.as_str())
            .str(self.tasker.as_str())
            .i64(self.wealth.micros())
            .i64(self.increment.micros())
            .f64(self.relevancy)
            .u64(self.b_timer)
            .len(self.assignments.len());
        for a in &self.assignments {
            e.str(&a.id)
                .u8(match a.kind {
                    AssignKind::Computing => 1,
                    AssignKind::Storage => 2,
                })
                .i64(a.wealth.micros())
                .i64(a.value.micros())
                .u64(a.replicas as u64)
                .bytes(&a.data)
                .u64(a.t_timer);
        }
        sha256(&[&e.finish()])
    }

    pub fn sign(&mut self, signer: &dyn Signer) {
        self.signature = signer.sign(&self.digest().0);
    }

    pub fn verify(&self, verifier: &dyn Verifier) -> bool {
        verifier.verify(&self.tasker, &self.digest().0, &self.signature)
    }
}

/// Signed acknowledgment or result of an assignment by a resource node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Receipt {
    pub task: TaskId,
    pub assign: String,
    pub node: NodeId,
    pub signature: Vec<u8>,
}

impl Receipt {
    fn bytes(kind: &str, task: &TaskId, assign: &str, node: &NodeId) -> Vec<u8> {
        let mut e = Encoder::new();
        e.str(kind).str(task.as_str()).str(assign).str(node.as_str());
        e.finish()
    }

    pub fn signed(kind: &str, signer: &dyn Signer, task: &TaskId, assign: &str) -> Self {
        let node = signer.id().clone();
        let signature = signer.sign(&Self::bytes(kind, task, assign, &node));
        Self {
            task: task.clone(),
            assign: assign.to_string(),
            node,
            signature,
        }
    }

    pub fn verify(&self, kind: &str, verifier: &dyn Verifier) -> bool {
        verifier.verify(
            &self.node,
            &Self::bytes(kind, &self.task, &self.assign, &self.node),
            &self.signature,
        )
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Msg {
    Request(Box<TaskRequest>),
    PrePrepare { task: TaskId, block: Box<Block> },
    Vote { task: TaskId, vote: Box<Vote> },
    Assign { task: TaskId, assign: String },
    Ack(Receipt),
    Result(Receipt),
}
