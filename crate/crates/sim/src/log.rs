//! Line-delimited event log. Every processed event becomes one JSON record.

use blockcloud_core::chain::{Digest, TranState, Vote};
use blockcloud_core::{Cftx, NodeId, TaskId};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "msg", rename_all = "kebab-case")]
pub enum MsgRecord {
    Request { task: TaskId, digest: Digest },
    PrePrepare { task: TaskId, height: u64, digest: Digest },
    Vote { task: TaskId, vote: Vote },
    Assign { task: TaskId, assign: String },
    Ack { task: TaskId, assign: String, node: NodeId },
    Result { task: TaskId, assign: String, node: NodeId },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum LogEntry {
    TaskInit {
        task: TaskId,
        tasker: NodeId,
        relevancy: f64,
    },
    TaskRejected {
        task: TaskId,
        reason: String,
    },
    ShardOpen {
        task: TaskId,
        validators: Vec<NodeId>,
        handler: NodeId,
        protocol: String,
    },
    ShardClose {
        task: TaskId,
    },
    Deliver {
        from: NodeId,
        to: NodeId,
        #[serde(flatten)]
        msg: MsgRecord,
    },
    Propose {
        node: NodeId,
        task: TaskId,
        height: u64,
        digest: Digest,
        recipients: usize,
    },
    ProposalDropped {
        node: NodeId,
        task: TaskId,
        height: u64,
        digest: Digest,
        reason: String,
    },
    ConflictDetected {
        node: NodeId,
        task: TaskId,
        first: Digest,
        second: Digest,
    },
    Bribe {
        node: NodeId,
        task: TaskId,
        height: u64,
        digest: Digest,
    },
    Equivocation {
        node: NodeId,
        task: TaskId,
        validator: NodeId,
        height: u64,
    },
    Finalize {
        node: NodeId,
        task: TaskId,
        height: u64,
        digest: Digest,
    },
    ConflictingFinalization {
        task: TaskId,
        height: u64,
        first: Digest,
        second: Digest,
    },
    Distribute {
        task: TaskId,
        assign: String,
        nodes: Vec<NodeId>,
        round: u32,
    },
    TaskerQuery {
        task: TaskId,
        assign: String,
    },
    Status {
        task: TaskId,
        assign: String,
        state: TranState,
    },
    BTimerExpired {
        task: TaskId,
    },
    TaskClosed {
        task: TaskId,
        height: u64,
    },
    TaskStalled {
        task: TaskId,
        refund: Cftx,
    },
    Kpi {
        task: TaskId,
        protocol: String,
        observed: Vec<f64>,
        prediction: Vec<f64>,
    },
    Settle {
        task: TaskId,
        pool: Cftx,
        minted: Cftx,
        awards: Vec<(NodeId, Cftx)>,
        levies: Vec<(NodeId, Cftx)>,
        burned: Cftx,
    },
    FaultInjected {
        node: NodeId,
        amount: Cftx,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub at: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub entry: LogEntry,
}

#[derive(Debug, Clone, Default)]
pub struct EventLog {
    lines: Vec<String>,
}

impl EventLog {
    pub fn push(&mut self, at: u64, seq: u64, entry: LogEntry) {
        let rec = LogRecord { at, seq, entry };
        self.lines
            .push(serde_json::to_string(&rec).expect("log record serializes"));
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.lines.iter().map(|l| l.len() + 1).sum());
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }
}
