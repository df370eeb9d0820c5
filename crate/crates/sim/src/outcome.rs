//! Run results: ledger view, per-task settlements, verdicts and summary.

use std::collections::{BTreeMap, BTreeSet};

use blockcloud_core::chain::{Block, Digest, Equivocation, KeyedDigestVerifier, TranState, Vote, VoteType};
use blockcloud_core::policy::TokenSupply;
use blockcloud_core::{Cftx, NodeId, TaskId};
use serde::Serialize;

use crate::log::EventLog;
use crate::model::Shard;

/// Final state of one assignment on the finalized chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TxState {
    pub assign: String,
    pub state: TranState,
    pub to: NodeId,
    pub value: Cftx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskStatus {
    Rejected,
    Open,
    Closed,
    Stalled,
}

/// Token balances and finalized task outcomes, with timing stripped out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerView {
    pub balances: BTreeMap<NodeId, Cftx>,
    pub escrow: BTreeMap<TaskId, Cftx>,
    pub tasks: BTreeMap<TaskId, (TaskStatus, Vec<TxState>)>,
    pub supply: TokenSupply,
}

impl LedgerView {
    /// Human-readable differences; empty when the ledgers agree.
    pub fn diff(&self, other: &LedgerView) -> Vec<String> {
        let mut out = Vec::new();
        let nodes: BTreeSet<&NodeId> = self.balances.keys().chain(other.balances.keys()).collect();
        for n in nodes {
            let (a, b) = (self.balances.get(n), other.balances.get(n));
            if a != b {
                out.push(format!("balance of {n}: {a:?} vs {b:?}"));
            }
        }
        if self.escrow != other.escrow {
            out.push(format!("escrow: {:?} vs {:?}", self.escrow, other.escrow));
        }
        let tasks: BTreeSet<&TaskId> = self.tasks.keys().chain(other.tasks.keys()).collect();
        for t in tasks {
            let (a, b) = (self.tasks.get(t), other.tasks.get(t));
            if a != b {
                out.push(format!("task {t}: {a:?} vs {b:?}"));
            }
        }
        if self.supply != other.supply {
            out.push(format!("supply: {:?} vs {:?}", self.supply, other.supply));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSettlement {
    pub task: TaskId,
    /// Escrowed task wealth plus newly minted tokens.
    pub pool: Cftx,
    pub minted: Cftx,
    pub awarded: Cftx,
    pub burned: Cftx,
    pub levies: usize,
}

impl TaskSettlement {
    pub fn conserves(&self) -> bool {
        self.awarded.checked_add(self.burned).ok() == Some(self.pool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Verdicts {
    /// circulating = genesis + issued - burned, and balances + escrow = circulating.
    pub supply_conserved: bool,
    /// Every settled task: awards + burned = pool.
    pub tasks_conserved: bool,
    /// No two honest validators finalized different blocks at one height.
    pub safe: bool,
    /// Every shard had at most F byzantine validators.
    pub safety_applies: bool,
    /// Every task closed before its b_timer.
    pub live: bool,
    /// All nodes were honest.
    pub liveness_applies: bool,
    pub shards_consistent: bool,
    /// Consecutive blocks are at least two network hops apart.
    pub intervals_respected: bool,
}

impl Verdicts {
    pub fn all_hold(&self) -> bool {
        self.supply_conserved
            && self.tasks_conserved
            && self.shards_consistent
            && self.intervals_respected
            && (!self.safety_applies || self.safe)
            && (!self.liveness_applies || self.live)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupplyRecord {
    pub genesis: Cftx,
    pub issued: Cftx,
    pub burned: Cftx,
    pub circulating: Cftx,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub blocks: usize,
    pub transactions: usize,
    pub tasks_closed: usize,
    pub tasks_stalled: usize,
    pub tasks_rejected: usize,
    pub simulated_us: u64,
    pub simulated_tps: f64,
    pub min_block_interval_us: Option<u64>,
    pub supply: SupplyRecord,
    pub tariff_events: usize,
    pub max_wealth_share: f64,
    pub conflicting_finalizations: usize,
    pub equivocations_detected: usize,
    pub protocols: BTreeMap<String, usize>,
    pub verdicts: Verdicts,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: Summary,
    pub ledger: LedgerView,
    pub log: EventLog,
    pub settlements: Vec<TaskSettlement>,
    /// First-finalized chain of every task, as seen by honest validators.
    pub canonical: BTreeMap<TaskId, Vec<Block>>,
    /// Every honest finalization: (task, height) -> digest -> validators.
    pub finalizations: BTreeMap<(TaskId, u64), BTreeMap<Digest, BTreeSet<NodeId>>>,
    pub detected: Vec<Equivocation>,
    pub shards: Vec<Shard>,
    /// Attempts by bribed validators to get a rewritten block finalized.
    pub bribe_attempts: usize,
}

impl RunOutput {
    /// Heights at which honest validators finalized different blocks.
    pub fn conflicts(&self) -> Vec<(TaskId, u64)> {
        self.finalizations
            .iter()
            .filter(|(_, by_digest)| by_digest.len() > 1)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn summary_record(&self) -> String {
        serde_json::json!({ "summary": self.summary }).to_string()
    }

    /// Log lines followed by the summary record.
    pub fn records(&self) -> String {
        let mut out = self.log.to_text();
        out.push_str(&self.summary_record());
        out.push('\n');
        out
    }
}

/// Scans a line-delimited log for validators that signed two different
/// votes of the same type at the same height of the same chain.
pub fn extract_equivocations(log_text: &str) -> Vec<(TaskId, Equivocation)> {
    let mut first: BTreeMap<(TaskId, NodeId, u64, VoteType), Vote> = BTreeMap::new();
    let mut found: BTreeMap<(TaskId, NodeId, u64, VoteType), Equivocation> = BTreeMap::new();
    for line in log_text.lines() {
        let Ok(rec) = serde_json::from_str::<serde_json::Value>(line) else {
            continue;
        };
        if rec["event"] != "deliver" || rec["msg"] != "vote" {
            continue;
        }
        let Ok(vote) = serde_json::from_value::<Vote>(rec["vote"].clone()) else {
            continue;
        };
        let Ok(task) = serde_json::from_value::<TaskId>(rec["task"].clone()) else {
            continue;
        };
        let key = (task, vote.from.clone(), vote.hv, vote.vote_type);
        match first.get(&key) {
            None => {
                first.insert(key, vote);
            }
            Some(prev) if prev.vote_hash != vote.vote_hash && !found.contains_key(&key) => {
                let ev = Equivocation {
                    validator: vote.from.clone(),
                    first: prev.clone(),
                    second: vote,
                };
                if ev.verify(&KeyedDigestVerifier) {
                    found.insert(key, ev);
                }
            }
            Some(_) => {}
        }
    }
    found.into_iter().map(|((task, ..), ev)| (task, ev)).collect()
}
