//! Discrete-event engine. Events run strictly in (time, insertion) order.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use blockcloud_core::bft::{choose, KpiStream, ProtocolCatalog};
use blockcloud_core::chain::max_faulty;
use blockcloud_core::chain::{
    proposal_digest, propose_root_block, quorum_threshold, sha256, AssignType, AssignmentSpec, Block, CftxIndex,
    Digest, Equivocation, KeyedDigestSigner, KeyedDigestVerifier, SideChain, StatusUpdate, TallyEvent, TaskSpec,
    TranState, Vote, VoteTally, VoteType,
};
use blockcloud_core::err::{relevancy_order, Candidate, FactorScore, NodeRankingProfile};
use blockcloud_core::policy::{select_service_nodes, AuditEvent, Dpoev};
use blockcloud_core::{Cftx, NodeId, TaskId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{AssignKind, Behavior, Role, ScenarioConfig};
use crate::log::{EventLog, LogEntry, MsgRecord};
use crate::model::{Msg, Receipt, RequestedAssignment, Shard, SimNode, TaskRequest};
use crate::outcome::{LedgerView, RunOutput, Summary, SupplyRecord, TaskSettlement, TaskStatus, TxState, Verdicts};
use crate::retry::{assignment_retry, tasker_decision, AckState, RetryAction};

#[derive(Debug)]
enum Event {
    TaskInit(usize),
    Deliver { from: NodeId, to: NodeId, msg: Msg },
    SendLater { from: NodeId, to: NodeId, msg: Msg },
    AckTimer { task: TaskId, assign: String },
    WorkDone { node: NodeId, task: TaskId, assign: String },
    BTimer(TaskId),
    Stall(TaskId),
}

#[derive(Debug)]
struct Queued {
    at: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Pending,
    Waiting,
    Accepted,
    Done,
    Abandoned,
}

#[derive(Debug, Clone)]
struct AssignRun {
    spec: RequestedAssignment,
    ranked: Vec<NodeId>,
    phase: Phase,
    acked: Vec<NodeId>,
    contacted: Vec<NodeId>,
    results: Vec<NodeId>,
    rounds: u32,
    extended: bool,
    primary: Option<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RunStatus {
    Open,
    Closed,
    Stalled,
}

#[derive(Debug, Clone)]
struct TaskRun {
    request: TaskRequest,
    protocol: String,
    /// The handler's own chain of proposals.
    chain: Option<SideChain>,
    digests: Vec<Digest>,
    pending: BTreeMap<String, VecDeque<StatusUpdate>>,
    assigns: BTreeMap<String, AssignRun>,
    distributed: bool,
    final_proposed: bool,
    /// Recipients of the second root when the handler equivocates.
    other_side: Vec<NodeId>,
    twin_sent: bool,
    admitted_at: u64,
    b_timer: u64,
    status: RunStatus,
    closed_at: Option<u64>,
}

/// Per-node, per-task consensus state.
#[derive(Debug, Clone, Default)]
struct Replica {
    requests: Vec<TaskRequest>,
    chain: Option<SideChain>,
    accepted: Vec<Digest>,
    finalized: usize,
    inbox: Vec<(NodeId, Block)>,
    tallies: BTreeMap<u64, VoteTally>,
    commit_sent: BTreeSet<(u64, Digest)>,
    prepare_sent: BTreeSet<(u64, Digest)>,
    acks: BTreeSet<(String, NodeId)>,
    results: BTreeSet<(String, NodeId)>,
    seen: BTreeMap<u64, Block>,
}

enum Judgement {
    Accept,
    Wait,
    Drop(String),
}

pub(crate) struct Simulation {
    cfg: ScenarioConfig,
    seed: u64,
    rng: ChaCha8Rng,
    now: u64,
    seq: u64,
    cur: u64,
    queue: BinaryHeap<Reverse<Queued>>,
    nodes: BTreeMap<NodeId, SimNode>,
    balances: BTreeMap<NodeId, Cftx>,
    escrow: BTreeMap<TaskId, Cftx>,
    dpoev: Dpoev,
    catalog: ProtocolCatalog,
    streams: BTreeMap<String, KpiStream>,
    predictions: BTreeMap<String, Vec<f64>>,
    tasks: BTreeMap<TaskId, TaskRun>,
    rejected: BTreeSet<TaskId>,
    admission: Vec<TaskId>,
    next_settle: usize,
    replicas: BTreeMap<(NodeId, TaskId), Replica>,
    shards: BTreeMap<TaskId, Shard>,
    open_shards: usize,
    open_tasks: usize,
    shards_consistent: bool,
    log: EventLog,
    settlements: Vec<TaskSettlement>,
    canonical: BTreeMap<TaskId, Vec<Block>>,
    finalizations: BTreeMap<(TaskId, u64), BTreeMap<Digest, BTreeSet<NodeId>>>,
    detected: Vec<Equivocation>,
    tariff_events: usize,
    max_share: f64,
    bribe_attempts: usize,
    protocols: BTreeMap<String, usize>,
}

fn default_node_profile(rng: &mut ChaCha8Rng) -> NodeRankingProfile {
    let w = 1.0 / 3.0;
    let mut f = [
        FactorScore::new(rng.gen::<f64>(), w, 1.0),
        FactorScore::new(rng.gen::<f64>(), w, 1.0),
        FactorScore::new(rng.gen::<f64>(), w, 1.0),
    ];
    f[2].weight = 1.0 - 2.0 * w;
    NodeRankingProfile::new(f).expect("weights sum to one")
}

impl Simulation {
    pub(crate) fn new(cfg: &ScenarioConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes = BTreeMap::new();
        let mut balances = BTreeMap::new();
        for (id, role) in cfg.node_ids() {
            let over = cfg.nodes.overrides.iter().find(|o| o.id == id);
            // every node draws a profile so overrides do not shift later draws
            let drawn = default_node_profile(&mut rng);
            let profile = over.and_then(|o| o.ranking_profile()).unwrap_or(drawn);
            let wealth = over.and_then(|o| o.wealth).unwrap_or(cfg.nodes.wealth);
            let entry = cfg.behaviors.iter().find(|b| b.node == id);
            let node_id = NodeId::new(id.clone());
            let beneficiary = entry
                .and_then(|b| b.beneficiary.clone())
                .map_or_else(|| node_id.clone(), NodeId::new);
            balances.insert(node_id.clone(), wealth);
            nodes.insert(
                node_id.clone(),
                SimNode {
                    id: node_id.clone(),
                    role,
                    behavior: entry.map_or(Behavior::Honest, |b| b.behavior),
                    beneficiary,
                    score: profile.score(),
                    profile,
                    signer: KeyedDigestSigner::new(node_id),
                },
            );
        }
        let genesis: Cftx = balances.values().copied().sum();
        let dpoev = Dpoev::genesis(cfg.policy, genesis).expect("validated policy and non-negative wealth");
        let mut sim = Self {
            cfg: cfg.clone(),
            seed,
            rng,
            now: 0,
            seq: 0,
            cur: 0,
            queue: BinaryHeap::new(),
            nodes,
            balances,
            escrow: BTreeMap::new(),
            dpoev,
            catalog: cfg.bft.catalog(),
            streams: BTreeMap::new(),
            predictions: BTreeMap::new(),
            tasks: BTreeMap::new(),
            rejected: BTreeSet::new(),
            admission: Vec::new(),
            next_settle: 0,
            replicas: BTreeMap::new(),
            shards: BTreeMap::new(),
            open_shards: 0,
            open_tasks: 0,
            shards_consistent: true,
            log: EventLog::default(),
            settlements: Vec::new(),
            canonical: BTreeMap::new(),
            finalizations: BTreeMap::new(),
            detected: Vec::new(),
            tariff_events: 0,
            max_share: 0.0,
            bribe_attempts: 0,
            protocols: BTreeMap::new(),
        };
        sim.sample_share();
        for (i, t) in cfg.tasks.iter().enumerate() {
            sim.schedule(t.at_us, Event::TaskInit(i));
        }
        sim
    }

    fn schedule(&mut self, at: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Reverse(Queued {
            at,
            seq: self.seq,
            event,
        }));
    }

    fn record(&mut self, entry: LogEntry) {
        self.log.push(self.now, self.cur, entry);
    }

    fn latency(&mut self, from: &NodeId, to: &NodeId) -> u64 {
        if from == to {
            0
        } else {
            self.rng.gen_range(self.cfg.latency.min_us..=self.cfg.latency.max_us)
        }
    }

    fn send(&mut self, from: &NodeId, to: &NodeId, msg: Msg) {
        let at = self.now + self.latency(from, to);
        self.schedule(
            at,
            Event::Deliver {
                from: from.clone(),
                to: to.clone(),
                msg,
            },
        );
    }

    fn broadcast(&mut self, from: &NodeId, to: &[NodeId], msg: Msg) {
        for t in to {
            self.send(from, t, msg.clone());
        }
    }

    fn behavior(&self, n: &NodeId) -> Behavior {
        self.nodes.get(n).map_or(Behavior::Honest, |x| x.behavior)
    }

    fn members(&self, task: &TaskId) -> Vec<NodeId> {
        self.shards.get(task).map(|s| s.validators.clone()).unwrap_or_default()
    }

    fn handler(&self, task: &TaskId) -> Option<NodeId> {
        self.shards.get(task).map(|s| s.handler.clone())
    }

    fn replica(&mut self, node: &NodeId, task: &TaskId) -> &mut Replica {
        self.replicas.entry((node.clone(), task.clone())).or_default()
    }

    pub(crate) fn run(mut self) -> RunOutput {
        while let Some(Reverse(q)) = self.queue.pop() {
            self.now = q.at;
            self.cur = q.seq;
            match q.event {
                Event::TaskInit(i) => self.on_task_init(i),
                Event::Deliver { from, to, msg } => self.on_deliver(from, to, msg),
                Event::SendLater { from, to, msg } => self.send(&from, &to, msg),
                Event::AckTimer { task, assign } => self.on_ack_timer(&task, &assign),
                Event::WorkDone { node, task, assign } => self.on_work_done(&node, &task, &assign),
                Event::BTimer(task) => self.on_b_timer(&task),
                Event::Stall(task) => self.on_stall(&task),
            }
            if self.open_shards != self.open_tasks {
                self.shards_consistent = false;
            }
        }
        self.finish()
    }

    // ---- task admission -------------------------------------------------

    fn adjusted_catalog(&self) -> ProtocolCatalog {
        let mut cat = self.catalog.clone();
        for p in &mut cat.profiles {
            if let Some(pred) = self.predictions.get(&p.name) {
                for (k, r) in p.kpi.iter_mut().zip(pred) {
                    let scaled = *k * r;
                    if scaled.is_finite() && scaled >= 0.0 {
                        *k = scaled;
                    }
                }
            }
        }
        cat
    }

    fn ranked_resources(&self, kind: AssignKind, relevancy: f64) -> Vec<NodeId> {
        let role = match kind {
            AssignKind::Computing => Role::Computing,
            AssignKind::Storage => Role::Storage,
        };
        let mut cands: Vec<Candidate> = self
            .nodes
            .values()
            .filter(|n| n.role == role)
            .map(|n| Candidate::new(n.id.clone(), n.score, self.balances[&n.id]))
            .collect();
        cands.sort_by(|a, b| relevancy_order(relevancy, a, b));
        cands.into_iter().map(|c| c.id).collect()
    }

    fn reject(&mut self, task: TaskId, reason: String) {
        self.rejected.insert(task.clone());
        self.record(LogEntry::TaskRejected { task, reason });
    }

    fn on_task_init(&mut self, idx: usize) {
        let tc = self.cfg.tasks[idx].clone();
        let task = TaskId::new(tc.id.clone());
        let tasker = NodeId::new(tc.tasker.clone());
        let relevancy = tc.ranking_profile().score();
        self.record(LogEntry::TaskInit {
            task: task.clone(),
            tasker: tasker.clone(),
            relevancy,
        });

        let supers: Vec<Candidate> = self
            .nodes
            .values()
            .filter(|n| n.role == Role::Super)
            .map(|n| Candidate::new(n.id.clone(), n.score, self.balances[&n.id]))
            .collect();
        let selection = match select_service_nodes(relevancy, &supers, self.cfg.nodes.validators_per_task) {
            Ok(s) => s,
            Err(e) => return self.reject(task, e.to_string()),
        };
        if self.balances[&tasker] < tc.wealth {
            return self.reject(task, format!("tasker balance below task wealth {}", tc.wealth));
        }
        let protocol = match choose(&self.adjusted_catalog(), &self.cfg.bft.preferences) {
            Ok((i, _)) => self.catalog.profiles[i].name.clone(),
            Err(e) => return self.reject(task, e.to_string()),
        };

        let b_timer = tc.b_timer_us.unwrap_or(self.cfg.timers.b_timer_us);
        let mut request = TaskRequest {
            task: task.clone(),
            tasker: tasker.clone(),
            wealth: tc.wealth,
            increment: tc.increment,
            relevancy,
            b_timer,
            assignments: tc
                .assignments
                .iter()
                .map(|a| RequestedAssignment {
                    id: a.id.clone(),
                    kind: a.kind,
                    wealth: a.wealth,
                    value: a.value,
                    replicas: a.replicas,
                    data: a.data.as_bytes().to_vec(),
                    t_timer: a.t_timer_us.unwrap_or(self.cfg.timers.t_timer_us),
                })
                .collect(),
            signature: Vec::new(),
        };
        request.sign(&self.nodes[&tasker].signer);

        let bal = self.balances.get_mut(&tasker).expect("tasker exists");
        *bal = *bal - tc.wealth;
        self.escrow.insert(task.clone(), tc.wealth);

        let assigns = request
            .assignments
            .iter()
            .map(|a| {
                (
                    a.id.clone(),
                    AssignRun {
                        spec: a.clone(),
                        ranked: self.ranked_resources(a.kind, relevancy),
                        phase: Phase::Pending,
                        acked: Vec::new(),
                        contacted: Vec::new(),
                        results: Vec::new(),
                        rounds: 0,
                        extended: false,
                        primary: None,
                    },
                )
            })
            .collect();
        self.tasks.insert(
            task.clone(),
            TaskRun {
                request: request.clone(),
                protocol: protocol.clone(),
                chain: None,
                digests: Vec::new(),
                pending: BTreeMap::new(),
                assigns,
                distributed: false,
                final_proposed: false,
                other_side: Vec::new(),
                twin_sent: false,
                admitted_at: self.now,
                b_timer,
                status: RunStatus::Open,
                closed_at: None,
            },
        );
        self.admission.push(task.clone());
        *self.protocols.entry(protocol.clone()).or_default() += 1;

        let shard = Shard {
            task: task.clone(),
            validators: selection.members.clone(),
            handler: selection.handler.clone(),
            open: true,
        };
        self.record(LogEntry::ShardOpen {
            task: task.clone(),
            validators: shard.validators.clone(),
            handler: shard.handler.clone(),
            protocol,
        });
        self.shards.insert(task.clone(), shard);
        self.open_shards += 1;
        self.open_tasks += 1;

        let members = selection.members;
        self.broadcast(&tasker, &members, Msg::Request(Box::new(request.clone())));
        if self.behavior(&tasker) == Behavior::DoubleSpender {
            // the conflicting spend goes out once the first has surely landed
            let mut twin = request;
            for a in &mut twin.assignments {
                a.data.extend_from_slice(b"#respend");
            }
            twin.sign(&self.nodes[&tasker].signer);
            let at = self.now + self.cfg.latency.max_us + 1;
            for m in &members {
                self.seq += 1;
                self.queue.push(Reverse(Queued {
                    at,
                    seq: self.seq,
                    event: Event::SendLater {
                        from: tasker.clone(),
                        to: m.clone(),
                        msg: Msg::Request(Box::new(twin.clone())),
                    },
                }));
            }
        }
        self.schedule(self.now + b_timer, Event::BTimer(task));
    }

    // ---- message dispatch -----------------------------------------------

    fn on_deliver(&mut self, from: NodeId, to: NodeId, msg: Msg) {
        let rec = match &msg {
            Msg::Request(r) => MsgRecord::Request {
                task: r.task.clone(),
                digest: r.digest(),
            },
            Msg::PrePrepare { task, block } => MsgRecord::PrePrepare {
                task: task.clone(),
                height: block.header.height,
                digest: proposal_digest(block),
            },
            Msg::Vote { task, vote } => MsgRecord::Vote {
                task: task.clone(),
                vote: (**vote).clone(),
            },
            Msg::Assign { task, assign } => MsgRecord::Assign {
                task: task.clone(),
                assign: assign.clone(),
            },
            Msg::Ack(r) => MsgRecord::Ack {
                task: r.task.clone(),
                assign: r.assign.clone(),
                node: r.node.clone(),
            },
            Msg::Result(r) => MsgRecord::Result {
                task: r.task.clone(),
                assign: r.assign.clone(),
                node: r.node.clone(),
            },
        };
        self.record(LogEntry::Deliver {
            from: from.clone(),
            to: to.clone(),
            msg: rec,
        });
        match msg {
            Msg::Request(r) => self.on_request(&to, *r),
            Msg::PrePrepare { task, block } => self.on_proposal(&to, &from, &task, *block),
            Msg::Vote { task, vote } => self.on_vote(&to, &task, *vote),
            Msg::Assign { task, assign } => self.on_assign(&to, &task, &assign),
            Msg::Ack(r) => self.on_receipt(&to, r, false),
            Msg::Result(r) => self.on_receipt(&to, r, true),
        }
    }

    fn on_request(&mut self, m: &NodeId, req: TaskRequest) {
        let task = req.task.clone();
        if !req.verify(&KeyedDigestVerifier) || !self.members(&task).contains(m) {
            return;
        }
        let digest = req.digest();
        let r = self.replica(m, &task);
        if r.requests.iter().any(|x| x.digest() == digest) {
            return;
        }
        let first = r.requests.first().map(TaskRequest::digest);
        r.requests.push(req.clone());
        if let Some(first) = first {
            self.record(LogEntry::ConflictDetected {
                node: m.clone(),
                task: task.clone(),
                first,
                second: digest,
            });
        }
        if self.behavior(m) == Behavior::Honest {
            self.process_inbox(m, &task);
        }
        if self.handler(&task).as_ref() == Some(m) {
            self.handler_on_request(&task, req, first.is_none());
        }
    }

    // ---- handler --------------------------------------------------------

    fn build_root(&self, task: &TaskId, req: &TaskRequest, ts: u64) -> Option<Block> {
        let run = &self.tasks[task];
        let handler = self.handler(task)?;
        let spec = TaskSpec {
            task_id: task.clone(),
            tnad: req.tasker.clone(),
            thad: handler.clone(),
            ts,
            b_timer: req.b_timer,
            cftx_index: CftxIndex {
                global_wealth: self.dpoev.supply().circulating(),
                task_wealth: req.wealth,
                th_wealth: self.balances[&handler],
                t_relevancy: req.relevancy,
            },
            assignments: req
                .assignments
                .iter()
                .map(|a| AssignmentSpec {
                    assign_id: a.id.clone(),
                    assign_type: match a.kind {
                        AssignKind::Computing => AssignType::Computing,
                        AssignKind::Storage => AssignType::Storage,
                    },
                    assign_wealth: a.wealth,
                    to: run.assigns[&a.id]
                        .ranked
                        .first()
                        .cloned()
                        .unwrap_or_else(|| handler.clone()),
                    value: a.value,
                    data: a.data.clone(),
                    t_timer: a.t_timer,
                })
                .collect(),
        };
        propose_root_block(&spec).ok()
    }

    fn handler_on_request(&mut self, task: &TaskId, req: TaskRequest, first: bool) {
        let Some(handler) = self.handler(task) else { return };
        let behavior = self.behavior(&handler);
        let run = &self.tasks[task];
        if run.status != RunStatus::Open {
            return;
        }
        match behavior {
            Behavior::Silent => {}
            Behavior::Equivocator => {
                if first {
                    let tasker_colludes = self.behavior(&req.tasker) == Behavior::DoubleSpender;
                    self.propose_split_root(task, &req, !tasker_colludes);
                } else if !self.tasks[task].twin_sent {
                    // the colluding tasker's second spend goes to the other side
                    if let Some(b) = self.build_root(task, &req, self.now) {
                        let to = self.tasks[task].other_side.clone();
                        self.tasks.get_mut(task).expect("run").twin_sent = true;
                        self.send_proposal(&handler, task, b, &to);
                    }
                }
            }
            _ => {
                if first {
                    if let Some(root) = self.build_root(task, &req, self.now) {
                        let members = self.members(task);
                        self.adopt_proposal(task, root.clone());
                        self.send_proposal(&handler, task, root, &members);
                    }
                }
            }
        }
    }

    /// Equivocating handler: one root for half of the honest validators, a
    /// conflicting one for the other half; byzantine members receive both.
    fn propose_split_root(&mut self, task: &TaskId, req: &TaskRequest, forge_now: bool) {
        let handler = self.handler(task).expect("shard");
        let members = self.members(task);
        let (mut honest, byz): (Vec<NodeId>, Vec<NodeId>) = members
            .iter()
            .cloned()
            .partition(|m| self.behavior(m) == Behavior::Honest);
        honest.shuffle(&mut self.rng);
        let cut = honest.len() / 2;
        let side_a: Vec<NodeId> = byz.iter().chain(&honest[..cut]).cloned().collect();
        let side_b: Vec<NodeId> = byz.iter().chain(&honest[cut..]).cloned().collect();
        let Some(root) = self.build_root(task, req, self.now) else {
            return;
        };
        self.adopt_proposal(task, root.clone());
        self.tasks.get_mut(task).expect("run").other_side = side_b.clone();
        self.send_proposal(&handler, task, root.clone(), &side_a);
        if forge_now {
            let mut forged = root;
            forged.header.ts += 1;
            self.tasks.get_mut(task).expect("run").twin_sent = true;
            self.send_proposal(&handler, task, forged, &side_b);
        }
    }

    fn adopt_proposal(&mut self, task: &TaskId, block: Block) {
        let d = proposal_digest(&block);
        let run = self.tasks.get_mut(task).expect("run");
        match &mut run.chain {
            None => run.chain = SideChain::new(task.clone(), block).ok(),
            Some(c) => c.append_block(block).expect("handler extends its own chain"),
        }
        run.digests.push(d);
    }

    fn send_proposal(&mut self, from: &NodeId, task: &TaskId, block: Block, to: &[NodeId]) {
        self.record(LogEntry::Propose {
            node: from.clone(),
            task: task.clone(),
            height: block.header.height,
            digest: proposal_digest(&block),
            recipients: to.len(),
        });
        self.broadcast(
            from,
            to,
            Msg::PrePrepare {
                task: task.clone(),
                block: Box::new(block),
            },
        );
    }

    fn handler_progress(&mut self, task: &TaskId) {
        let Some(handler) = self.handler(task) else { return };
        let run = &self.tasks[task];
        if run.status != RunStatus::Open || run.digests.is_empty() {
            return;
        }
        let q = quorum_threshold(self.members(task).len());
        let root = run.digests[0];
        let root_committed = self
            .replicas
            .get(&(handler.clone(), task.clone()))
            .and_then(|r| r.tallies.get(&0))
            .is_some_and(|t| t.commit_count(&root) >= q);
        if !run.distributed && root_committed {
            self.distribute(task);
        }
        self.try_propose(task);
    }

    fn last_prepared(&self, task: &TaskId) -> bool {
        let Some(handler) = self.handler(task) else {
            return false;
        };
        let run = &self.tasks[task];
        let Some(last) = run.digests.last() else { return false };
        let h = (run.digests.len() - 1) as u64;
        let q = quorum_threshold(self.members(task).len());
        self.replicas
            .get(&(handler, task.clone()))
            .and_then(|r| r.tallies.get(&h))
            .is_some_and(|t| t.prepare_count(last) >= q)
    }

    fn try_propose(&mut self, task: &TaskId) {
        let Some(handler) = self.handler(task) else { return };
        if self.behavior(&handler) == Behavior::Silent {
            return;
        }
        {
            let run = &self.tasks[task];
            if run.status != RunStatus::Open || run.final_proposed {
                return;
            }
            let Some(chain) = &run.chain else { return };
            let idle = run.pending.values().all(VecDeque::is_empty);
            let closable = chain
                .tip()
                .transactions
                .iter()
                .all(|t| matches!(t.tran_state, TranState::Completion | TranState::Abandoned));
            if idle && !closable {
                return;
            }
        }
        // block k+1 may start once block k has a prepare quorum
        if !self.last_prepared(task) {
            return;
        }
        let run = self.tasks.get_mut(task).expect("run");
        let updates: Vec<StatusUpdate> = run.pending.values_mut().filter_map(VecDeque::pop_front).collect();
        let chain = run.chain.as_ref().expect("root proposed");
        let mut states: BTreeMap<&str, TranState> = chain
            .tip()
            .transactions
            .iter()
            .map(|t| (t.assign_id.as_str(), t.tran_state))
            .collect();
        for u in &updates {
            states.insert(u.assign_id.as_str(), u.state);
        }
        // completions are recorded in a status block before the closing block
        let is_final = if updates.is_empty() {
            true
        } else {
            states.values().all(|s| s.is_terminal())
        };
        let built = if is_final {
            chain.propose_final_block(self.now, &updates)
        } else {
            chain.propose_status_block(self.now, &updates)
        };
        let block = match built {
            Ok(b) => b,
            Err(e) => {
                let (height, digest) = (chain.height() + 1, Digest::ZERO);
                self.record(LogEntry::ProposalDropped {
                    node: handler,
                    task: task.clone(),
                    height,
                    digest,
                    reason: e.to_string(),
                });
                return;
            }
        };
        run.final_proposed = is_final;
        for u in &updates {
            let entry = LogEntry::Status {
                task: task.clone(),
                assign: u.assign_id.clone(),
                state: u.state,
            };
            self.log.push(self.now, self.cur, entry);
        }
        self.adopt_proposal(task, block.clone());
        let members = self.members(task);
        self.send_proposal(&handler, task, block, &members);
    }

    fn queue_update(&mut self, task: &TaskId, update: StatusUpdate) {
        let run = self.tasks.get_mut(task).expect("run");
        run.pending
            .entry(update.assign_id.clone())
            .or_default()
            .push_back(update);
    }

    fn distribute(&mut self, task: &TaskId) {
        let Some(handler) = self.handler(task) else { return };
        let run = self.tasks.get_mut(task).expect("run");
        run.distributed = true;
        let mut sends = Vec::new();
        for (id, a) in run.assigns.iter_mut() {
            if a.phase != Phase::Pending {
                continue;
            }
            let targets: Vec<NodeId> = a.ranked.iter().take(a.spec.replicas).cloned().collect();
            a.contacted = targets.clone();
            a.phase = Phase::Waiting;
            sends.push((id.clone(), targets, a.spec.t_timer));
        }
        for (assign, targets, t_timer) in sends {
            self.record(LogEntry::Distribute {
                task: task.clone(),
                assign: assign.clone(),
                nodes: targets.clone(),
                round: 0,
            });
            self.broadcast(
                &handler,
                &targets,
                Msg::Assign {
                    task: task.clone(),
                    assign: assign.clone(),
                },
            );
            self.schedule(
                self.now + t_timer,
                Event::AckTimer {
                    task: task.clone(),
                    assign,
                },
            );
        }
    }

    fn on_ack_timer(&mut self, task: &TaskId, assign: &str) {
        let Some(handler) = self.handler(task) else { return };
        let policy = self
            .cfg
            .tasks
            .iter()
            .find(|t| t.id == task.as_str())
            .map(|t| t.on_exhausted)
            .unwrap_or_default();
        let max_rounds = self.cfg.timers.ack_rounds;
        let run = self.tasks.get_mut(task).expect("run");
        if run.status != RunStatus::Open {
            return;
        }
        let a = run.assigns.get_mut(assign).expect("assignment");
        if a.phase != Phase::Waiting {
            return;
        }
        let state = AckState {
            needed: a.spec.replicas,
            acked: a.acked.clone(),
            contacted: a.contacted.clone(),
            round: a.rounds,
            max_rounds,
        };
        let mut action = assignment_retry(&state, &a.ranked);
        let mut queried = false;
        if action == RetryAction::QueryTasker {
            queried = true;
            action = if a.extended {
                RetryAction::Abandon
            } else {
                tasker_decision(policy, &state, &a.ranked)
            };
        }
        let t_timer = a.spec.t_timer;
        let round;
        match &action {
            RetryAction::Redistribute(extra) => {
                if queried {
                    a.extended = true;
                    a.rounds = 0;
                } else {
                    a.rounds += 1;
                }
                a.contacted.extend(extra.iter().cloned());
                round = a.rounds;
            }
            RetryAction::Abandon => {
                a.phase = Phase::Abandoned;
                round = a.rounds;
            }
            RetryAction::Proceed | RetryAction::QueryTasker => return,
        }
        if queried {
            self.record(LogEntry::TaskerQuery {
                task: task.clone(),
                assign: assign.to_string(),
            });
        }
        match action {
            RetryAction::Redistribute(extra) => {
                self.record(LogEntry::Distribute {
                    task: task.clone(),
                    assign: assign.to_string(),
                    nodes: extra.clone(),
                    round,
                });
                self.broadcast(
                    &handler,
                    &extra,
                    Msg::Assign {
                        task: task.clone(),
                        assign: assign.to_string(),
                    },
                );
                self.schedule(
                    self.now + t_timer,
                    Event::AckTimer {
                        task: task.clone(),
                        assign: assign.to_string(),
                    },
                );
            }
            _ => {
                self.queue_update(task, StatusUpdate::new(assign, TranState::Abandoned));
                self.try_propose(task);
            }
        }
    }

    fn handler_on_receipt(&mut self, task: &TaskId, rec: &Receipt, result: bool) {
        let run = self.tasks.get_mut(task).expect("run");
        if run.status != RunStatus::Open {
            return;
        }
        let Some(a) = run.assigns.get_mut(&rec.assign) else {
            return;
        };
        if !a.contacted.contains(&rec.node) {
            return;
        }
        let mut updates = Vec::new();
        if result {
            if a.acked.contains(&rec.node) && !a.results.contains(&rec.node) {
                a.results.push(rec.node.clone());
            }
        } else if !a.acked.contains(&rec.node) {
            a.acked.push(rec.node.clone());
            if a.phase == Phase::Waiting && a.acked.len() >= a.spec.replicas {
                a.phase = Phase::Accepted;
                a.primary = Some(a.acked[0].clone());
                let mut u = StatusUpdate::new(rec.assign.clone(), TranState::Acceptance);
                u.to = a.primary.clone();
                updates.push(u);
            }
        }
        if a.phase == Phase::Accepted
            && a.primary.as_ref().is_some_and(|p| a.results.contains(p))
            && a.results.len() >= a.spec.replicas
        {
            a.phase = Phase::Done;
            updates.push(StatusUpdate::new(rec.assign.clone(), TranState::Completion));
        }
        for u in updates {
            self.queue_update(task, u);
        }
        self.try_propose(task);
    }

    fn on_b_timer(&mut self, task: &TaskId) {
        let Some(run) = self.tasks.get_mut(task) else { return };
        if run.status != RunStatus::Open {
            return;
        }
        let b_timer = run.b_timer;
        for (id, a) in run.assigns.iter_mut() {
            if matches!(a.phase, Phase::Pending | Phase::Waiting | Phase::Accepted) {
                a.phase = Phase::Abandoned;
                let q = run.pending.entry(id.clone()).or_default();
                q.clear();
                q.push_back(StatusUpdate::new(id.clone(), TranState::Abandoned));
            }
        }
        self.record(LogEntry::BTimerExpired { task: task.clone() });
        self.try_propose(task);
        self.schedule(self.now + b_timer, Event::Stall(task.clone()));
    }

    fn on_stall(&mut self, task: &TaskId) {
        let Some(run) = self.tasks.get_mut(task) else { return };
        if run.status != RunStatus::Open {
            return;
        }
        run.status = RunStatus::Stalled;
        let tasker = run.request.tasker.clone();
        let refund = self.escrow.remove(task).unwrap_or(Cftx::ZERO);
        let bal = self.balances.get_mut(&tasker).expect("tasker");
        *bal = *bal + refund;
        self.open_tasks -= 1;
        self.record(LogEntry::TaskStalled {
            task: task.clone(),
            refund,
        });
        self.dissolve(task);
        self.flush_settlements();
    }

    fn dissolve(&mut self, task: &TaskId) {
        if let Some(s) = self.shards.get_mut(task) {
            if s.open {
                s.open = false;
                self.open_shards -= 1;
                self.record(LogEntry::ShardClose { task: task.clone() });
            }
        }
    }

    // ---- resource nodes -------------------------------------------------

    fn on_assign(&mut self, x: &NodeId, task: &TaskId, assign: &str) {
        if self.behavior(x) != Behavior::Honest {
            return;
        }
        let members = self.members(task);
        let rec = Receipt::signed("ack", &self.nodes[x].signer, task, assign);
        self.broadcast(x, &members, Msg::Ack(rec));
        let (lo, hi) = (self.cfg.timers.work_min_us, self.cfg.timers.work_max_us);
        let work = self.rng.gen_range(lo..=hi);
        self.schedule(
            self.now + work,
            Event::WorkDone {
                node: x.clone(),
                task: task.clone(),
                assign: assign.to_string(),
            },
        );
    }

    fn on_work_done(&mut self, x: &NodeId, task: &TaskId, assign: &str) {
        let members = self.members(task);
        let rec = Receipt::signed("result", &self.nodes[x].signer, task, assign);
        self.broadcast(x, &members, Msg::Result(rec));
    }

    fn on_receipt(&mut self, m: &NodeId, rec: Receipt, result: bool) {
        let kind = if result { "result" } else { "ack" };
        let task = rec.task.clone();
        if !rec.verify(kind, &KeyedDigestVerifier) || !self.members(&task).contains(m) {
            return;
        }
        if self.behavior(m) == Behavior::Silent {
            return;
        }
        let r = self.replica(m, &task);
        let key = (rec.assign.clone(), rec.node.clone());
        if result {
            r.results.insert(key);
        } else {
            r.acks.insert(key);
        }
        if self.behavior(m) == Behavior::Honest {
            self.process_inbox(m, &task);
        }
        if self.handler(&task).as_ref() == Some(m) {
            self.handler_on_receipt(&task, &rec, result);
        }
    }

    // ---- validators -----------------------------------------------------

    fn vote(&mut self, m: &NodeId, task: &TaskId, digest: Digest, height: u64, vote_type: VoteType) {
        let protocol = self.tasks[task].protocol.clone();
        let vote = Vote::signed(&self.nodes[m].signer, &protocol, digest, height, vote_type);
        let members = self.members(task);
        self.broadcast(
            m,
            &members,
            Msg::Vote {
                task: task.clone(),
                vote: Box::new(vote),
            },
        );
    }

    fn on_proposal(&mut self, m: &NodeId, from: &NodeId, task: &TaskId, block: Block) {
        if !self.members(task).contains(m) {
            return;
        }
        match self.behavior(m) {
            Behavior::Silent | Behavior::DoubleSpender => {}
            Behavior::Honest => {
                self.replica(m, task).inbox.push((from.clone(), block));
                self.process_inbox(m, task);
            }
            Behavior::Equivocator => {
                let h = block.header.height;
                let d = proposal_digest(&block);
                if self.replica(m, task).prepare_sent.insert((h, d)) {
                    self.vote(m, task, d, h, VoteType::Prepare);
                    let shadow = sha256(&[&d.0, b"shadow"]);
                    if self.replica(m, task).prepare_sent.insert((h, shadow)) {
                        self.vote(m, task, shadow, h, VoteType::Prepare);
                    }
                }
            }
            Behavior::Briber => self.bribe(m, from, task, block),
        }
    }

    /// Votes for everything it sees and, for each handler proposal, passes
    /// rewritten versions of it and of its parent to the other bribed
    /// validators.
    fn bribe(&mut self, m: &NodeId, from: &NodeId, task: &TaskId, block: Block) {
        let h = block.header.height;
        let d = proposal_digest(&block);
        if self.replica(m, task).prepare_sent.insert((h, d)) {
            self.vote(m, task, d, h, VoteType::Prepare);
        }
        if self.handler(task).as_ref() != Some(from) {
            return;
        }
        let beneficiary = self.nodes[m].beneficiary.clone();
        let r = self.replica(m, task);
        let parent = h.checked_sub(1).and_then(|p| r.seen.get(&p).cloned());
        r.seen.entry(h).or_insert_with(|| block.clone());
        let bribed: Vec<NodeId> = self
            .members(task)
            .into_iter()
            .filter(|x| x != m && self.behavior(x) == Behavior::Briber)
            .collect();
        for original in std::iter::once(block).chain(parent) {
            let mut rewritten = original;
            for t in &mut rewritten.transactions {
                t.to = beneficiary.clone();
            }
            rewritten.seal();
            let rd = proposal_digest(&rewritten);
            let rh = rewritten.header.height;
            if !self.replica(m, task).prepare_sent.insert((rh, rd)) {
                continue;
            }
            self.bribe_attempts += 1;
            self.record(LogEntry::Bribe {
                node: m.clone(),
                task: task.clone(),
                height: rh,
                digest: rd,
            });
            self.broadcast(
                m,
                &bribed,
                Msg::PrePrepare {
                    task: task.clone(),
                    block: Box::new(rewritten),
                },
            );
            self.vote(m, task, rd, rh, VoteType::Prepare);
        }
    }

    fn judge(&self, m: &NodeId, task: &TaskId, from: &NodeId, block: &Block) -> Judgement {
        if self.handler(task).as_ref() != Some(from) {
            return Judgement::Drop("not from the task handler".into());
        }
        let r = &self.replicas[&(m.clone(), task.clone())];
        let h = block.header.height as usize;
        let d = proposal_digest(block);
        if h < r.accepted.len() {
            return Judgement::Drop(if r.accepted[h] == d {
                "duplicate".into()
            } else {
                "conflicts with the accepted block at this height".into()
            });
        }
        if h > r.accepted.len() {
            return Judgement::Wait;
        }
        if h == 0 {
            // the request it was built from may still be in flight
            if !r.requests.iter().any(|q| root_matches(block, q, from)) {
                return Judgement::Wait;
            }
            return match SideChain::new(task.clone(), block.clone()) {
                Ok(_) => Judgement::Accept,
                Err(e) => Judgement::Drop(e.to_string()),
            };
        }
        let chain = r.chain.as_ref().expect("accepted root");
        let mut trial = chain.clone();
        if let Err(e) = trial.append_block(block.clone()) {
            return Judgement::Drop(e.to_string());
        }
        evidence(chain.tip(), block, r)
    }

    fn process_inbox(&mut self, m: &NodeId, task: &TaskId) {
        loop {
            let inbox = std::mem::take(&mut self.replica(m, task).inbox);
            let mut keep = Vec::new();
            let mut progressed = false;
            for (from, block) in inbox {
                match self.judge(m, task, &from, &block) {
                    Judgement::Accept => {
                        self.accept(m, task, block);
                        progressed = true;
                    }
                    Judgement::Wait => keep.push((from, block)),
                    Judgement::Drop(reason) => self.record(LogEntry::ProposalDropped {
                        node: m.clone(),
                        task: task.clone(),
                        height: block.header.height,
                        digest: proposal_digest(&block),
                        reason,
                    }),
                }
            }
            let r = self.replica(m, task);
            keep.append(&mut r.inbox);
            r.inbox = keep;
            if !progressed {
                break;
            }
        }
    }

    fn accept(&mut self, m: &NodeId, task: &TaskId, block: Block) {
        let d = proposal_digest(&block);
        let h = block.header.height;
        let r = self.replica(m, task);
        match &mut r.chain {
            None => r.chain = Some(SideChain::new(task.clone(), block).expect("judged")),
            Some(c) => c.append_block(block).expect("judged"),
        }
        r.accepted.push(d);
        r.prepare_sent.insert((h, d));
        self.vote(m, task, d, h, VoteType::Prepare);
        self.advance(m, task);
    }

    /// Sends due commits and finalizes every height with a commit quorum.
    fn advance(&mut self, m: &NodeId, task: &TaskId) {
        let q = quorum_threshold(self.members(task).len());
        let r = self.replica(m, task);
        let mut commits = Vec::new();
        for h in r.finalized..r.accepted.len() {
            let d = r.accepted[h];
            let prepared = r.tallies.get(&(h as u64)).is_some_and(|t| t.prepare_count(&d) >= q);
            if prepared && r.commit_sent.insert((h as u64, d)) {
                commits.push((h as u64, d));
            }
        }
        let mut done = Vec::new();
        while r.finalized < r.accepted.len() {
            let h = r.finalized;
            let d = r.accepted[h];
            if !r.tallies.get(&(h as u64)).is_some_and(|t| t.commit_count(&d) >= q) {
                break;
            }
            r.finalized += 1;
            done.push(r.chain.as_ref().expect("accepted").blocks()[h].clone());
        }
        for (h, d) in commits {
            self.vote(m, task, d, h, VoteType::Commit);
        }
        for b in done {
            self.finalize(m, task, b);
        }
    }

    fn on_vote(&mut self, m: &NodeId, task: &TaskId, vote: Vote) {
        let behavior = self.behavior(m);
        if matches!(behavior, Behavior::Silent | Behavior::DoubleSpender) {
            return;
        }
        let members = self.members(task);
        if !members.contains(m) {
            return;
        }
        let q = quorum_threshold(members.len());
        let h = vote.hv;
        let r = self.replica(m, task);
        let tally = r.tallies.entry(h).or_insert_with(|| VoteTally::new(h, members));
        let Ok(events) = tally.add(&vote, &KeyedDigestVerifier) else {
            return;
        };
        let byz_commit = behavior != Behavior::Honest
            && vote.vote_type == VoteType::Prepare
            && tally.prepare_count(&vote.vote_hash) >= q
            && r.commit_sent.insert((h, vote.vote_hash));
        for ev in events {
            if let TallyEvent::Equivocation(eq) = ev {
                self.record(LogEntry::Equivocation {
                    node: m.clone(),
                    task: task.clone(),
                    validator: eq.validator.clone(),
                    height: h,
                });
                if behavior == Behavior::Honest {
                    self.detected.push(*eq);
                }
            }
        }
        if byz_commit {
            self.vote(m, task, vote.vote_hash, h, VoteType::Commit);
        }
        if behavior == Behavior::Honest {
            self.advance(m, task);
        }
        if self.handler(task).as_ref() == Some(m) {
            self.handler_progress(task);
        }
    }

    fn finalize(&mut self, m: &NodeId, task: &TaskId, block: Block) {
        let h = block.header.height;
        let d = proposal_digest(&block);
        self.record(LogEntry::Finalize {
            node: m.clone(),
            task: task.clone(),
            height: h,
            digest: d,
        });
        let slot = self.finalizations.entry((task.clone(), h)).or_default();
        let is_new_digest = !slot.contains_key(&d);
        let first = slot.keys().next().copied();
        slot.entry(d).or_default().insert(m.clone());
        if let (true, Some(first)) = (is_new_digest, first) {
            self.record(LogEntry::ConflictingFinalization {
                task: task.clone(),
                height: h,
                first,
                second: d,
            });
        }
        let canon = self.canonical.entry(task.clone()).or_default();
        let extends = match canon.last() {
            None => h == 0,
            Some(tip) => tip.header.height + 1 == h && block.header.parent_hash == tip.hash(),
        };
        if !extends {
            return;
        }
        canon.push(block.clone());
        self.observe_kpis(task, &block);
        let closes = block.transactions.iter().all(|t| t.tran_state.is_terminal());
        if closes && h > 0 {
            self.close_task(task, h);
        }
    }

    fn observe_kpis(&mut self, task: &TaskId, block: &Block) {
        let protocol = self.tasks[task].protocol.clone();
        let Ok(idx) = self.catalog.index_of(&protocol) else {
            return;
        };
        let nominal = self.catalog.profiles[idx].kpi.clone();
        if nominal.len() != 3 {
            return;
        }
        let latency_s = (self.now.saturating_sub(block.header.ts)).max(1) as f64 / 1e6;
        let observed = [
            block.transactions.len() as f64 / latency_s,
            latency_s,
            self.members(task).len() as f64,
        ];
        let ratios: Vec<f64> = observed
            .iter()
            .zip(&nominal)
            .map(|(o, n)| if *n > 0.0 { o / n } else { 1.0 })
            .collect();
        let dcc = self.cfg.dcc;
        let stream = match self.streams.entry(protocol.clone()) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => match KpiStream::new(3, &dcc) {
                Ok(s) => e.insert(s),
                Err(_) => return,
            },
        };
        let Ok(step) = stream.observe(&ratios) else { return };
        self.predictions.insert(protocol.clone(), step.prediction.clone());
        self.record(LogEntry::Kpi {
            task: task.clone(),
            protocol,
            observed: ratios,
            prediction: step.prediction,
        });
    }

    fn close_task(&mut self, task: &TaskId, height: u64) {
        let run = self.tasks.get_mut(task).expect("run");
        if run.status != RunStatus::Open {
            return;
        }
        run.status = RunStatus::Closed;
        run.closed_at = Some(self.now);
        self.open_tasks -= 1;
        self.record(LogEntry::TaskClosed {
            task: task.clone(),
            height,
        });
        self.dissolve(task);
        self.flush_settlements();
    }

    // ---- economics ------------------------------------------------------

    fn flush_settlements(&mut self) {
        while let Some(task) = self.admission.get(self.next_settle).cloned() {
            match self.tasks[&task].status {
                RunStatus::Open => break,
                RunStatus::Closed => self.settle(&task),
                RunStatus::Stalled => {}
            }
            self.next_settle += 1;
        }
    }

    fn settle(&mut self, task: &TaskId) {
        let run = &self.tasks[task];
        let increment = run.request.increment;
        let escrow = self.escrow.remove(task).unwrap_or(Cftx::ZERO);
        let supers: BTreeMap<NodeId, f64> = self.members(task).into_iter().map(|n| (n, 1.0)).collect();
        let final_states: BTreeMap<String, TranState> = self.canonical[task]
            .last()
            .map(|b| {
                b.transactions
                    .iter()
                    .map(|t| (t.assign_id.clone(), t.tran_state))
                    .collect()
            })
            .unwrap_or_default();
        let mut resources: BTreeMap<NodeId, f64> = BTreeMap::new();
        for (id, a) in &run.assigns {
            if final_states.get(id) != Some(&TranState::Close) || a.results.is_empty() {
                continue;
            }
            let weight = if a.spec.wealth.is_zero() {
                1.0
            } else {
                a.spec.wealth.to_f64()
            };
            for n in &a.results {
                *resources.entry(n.clone()).or_default() += weight / a.results.len() as f64;
            }
        }
        let minted = self.dpoev.issue(task, increment).expect("issuance within range");
        let pool = escrow + minted;
        let s = self
            .dpoev
            .settle(task, pool, supers, resources)
            .expect("positive weights and a valid pool");
        for (n, amt) in &s.awards {
            let b = self.balances.get_mut(n).expect("known node");
            *b = *b + *amt;
        }
        let awarded: Cftx = s.awards.values().copied().sum();
        self.tariff_events += s.levies.len();
        self.settlements.push(TaskSettlement {
            task: task.clone(),
            pool,
            minted,
            awarded,
            burned: s.burned,
            levies: s.levies.len(),
        });
        self.record(LogEntry::Settle {
            task: task.clone(),
            pool,
            minted,
            awards: s.awards.into_iter().collect(),
            levies: s.levies.into_iter().collect(),
            burned: s.burned,
        });
        self.sample_share();
    }

    fn sample_share(&mut self) {
        let total = self.dpoev.supply().circulating().to_f64();
        if total > 0.0 {
            let top = self.balances.values().map(|b| b.to_f64()).fold(0.0, f64::max);
            self.max_share = self.max_share.max(top / total);
        }
    }

    // ---- wrap-up --------------------------------------------------------

    fn finish(mut self) -> RunOutput {
        if self.cfg.fault_injection.conservation_breach {
            if let Some((node, bal)) = self.balances.iter_mut().next() {
                *bal = *bal + Cftx::from_micros(1);
                let node = node.clone();
                self.record(LogEntry::FaultInjected {
                    node,
                    amount: Cftx::from_micros(1),
                });
            }
        }
        let supply = self.dpoev.supply();

        // recompute the supply from the audit trail
        let (mut genesis, mut issued, mut burned) = (Cftx::ZERO, Cftx::ZERO, Cftx::ZERO);
        for ev in self.dpoev.events() {
            match ev {
                AuditEvent::Genesis { amount } => genesis = genesis + *amount,
                AuditEvent::Issue { minted, .. } => issued = issued + *minted,
                AuditEvent::Burn { amount, .. } => burned = burned + *amount,
                _ => {}
            }
        }
        let held: Cftx = self.balances.values().copied().sum::<Cftx>() + self.escrow.values().copied().sum::<Cftx>();
        let supply_conserved = genesis == supply.genesis
            && issued == supply.issued
            && burned == supply.burned
            && supply.circulating() == genesis + issued - burned
            && held == supply.circulating();
        let tasks_conserved = self.settlements.iter().all(TaskSettlement::conserves);

        let safety_applies = self.shards.values().all(|s| {
            let byz = s.validators.iter().filter(|v| self.behavior(v).is_byzantine()).count();
            byz <= max_faulty(s.validators.len())
        });
        let conflicts = self.finalizations.values().filter(|m| m.len() > 1).count();
        let liveness_applies = self.nodes.values().all(|n| n.behavior == Behavior::Honest);
        let live = self
            .tasks
            .values()
            .all(|r| r.status == RunStatus::Closed && r.closed_at.is_some_and(|c| c <= r.admitted_at + r.b_timer));
        let shards_consistent = self.shards_consistent
            && self
                .shards
                .iter()
                .all(|(t, s)| s.validators.contains(&s.handler) && s.open == (self.tasks[t].status == RunStatus::Open));

        let mut min_interval: Option<u64> = None;
        for chain in self.canonical.values() {
            for w in chain.windows(2) {
                let gap = w[1].header.ts - w[0].header.ts;
                min_interval = Some(min_interval.map_or(gap, |m| m.min(gap)));
            }
        }
        let hop_bound = 2 * self.cfg.latency.min_us;
        let intervals_respected = self.shards.values().all(|s| quorum_threshold(s.validators.len()) < 2)
            || min_interval.is_none_or(|m| m >= hop_bound);

        let verdicts = Verdicts {
            supply_conserved,
            tasks_conserved,
            safe: conflicts == 0,
            safety_applies,
            live,
            liveness_applies,
            shards_consistent,
            intervals_respected,
        };

        let blocks: usize = self.canonical.values().map(Vec::len).sum();
        let transactions: usize = self.canonical.values().flatten().map(|b| b.transactions.len()).sum();
        let simulated_tps = if self.now > 0 {
            transactions as f64 / (self.now as f64 / 1e6)
        } else {
            0.0
        };
        let status_of = |r: &TaskRun| match r.status {
            RunStatus::Open => TaskStatus::Open,
            RunStatus::Closed => TaskStatus::Closed,
            RunStatus::Stalled => TaskStatus::Stalled,
        };
        let mut ledger_tasks = BTreeMap::new();
        for (t, r) in &self.tasks {
            let states = self
                .canonical
                .get(t)
                .and_then(|c| c.last())
                .map(|b| {
                    b.transactions
                        .iter()
                        .map(|x| TxState {
                            assign: x.assign_id.clone(),
                            state: x.tran_state,
                            to: x.to.clone(),
                            value: x.value,
                        })
                        .collect()
                })
                .unwrap_or_default();
            ledger_tasks.insert(t.clone(), (status_of(r), states));
        }
        for t in &self.rejected {
            ledger_tasks.insert(t.clone(), (TaskStatus::Rejected, Vec::new()));
        }
        let count = |s: RunStatus| self.tasks.values().filter(|r| r.status == s).count();
        let summary = Summary {
            seed: self.seed,
            blocks,
            transactions,
            tasks_closed: count(RunStatus::Closed),
            tasks_stalled: count(RunStatus::Stalled),
            tasks_rejected: self.rejected.len(),
            simulated_us: self.now,
            simulated_tps,
            min_block_interval_us: min_interval,
            supply: SupplyRecord {
                genesis: supply.genesis,
                issued: supply.issued,
                burned: supply.burned,
                circulating: supply.circulating(),
            },
            tariff_events: self.tariff_events,
            max_wealth_share: self.max_share,
            conflicting_finalizations: conflicts,
            equivocations_detected: self.detected.len(),
            protocols: self.protocols.clone(),
            verdicts,
        };
        RunOutput {
            summary,
            ledger: LedgerView {
                balances: self.balances,
                escrow: self.escrow,
                tasks: ledger_tasks,
                supply,
            },
            log: self.log,
            settlements: self.settlements,
            canonical: self.canonical,
            finalizations: self.finalizations,
            detected: self.detected,
            shards: self.shards.into_values().collect(),
            bribe_attempts: self.bribe_attempts,
        }
    }
}

fn root_matches(block: &Block, req: &TaskRequest, handler: &NodeId) -> bool {
    let h = &block.header;
    h.tnad == req.tasker
        && &h.thad == handler
        && h.b_timer == req.b_timer
        && block.cftx_index.task_wealth == req.wealth
        && block.cftx_index.t_relevancy == req.relevancy
        && block.transactions.len() == req.assignments.len()
        && block.transactions.iter().zip(&req.assignments).all(|(t, a)| {
            t.assign_id == a.id
                && t.assign_type
                    == match a.kind {
                        AssignKind::Computing => AssignType::Computing,
                        AssignKind::Storage => AssignType::Storage,
                    }
                && t.assign_wealth == a.wealth
                && t.value == a.value
                && t.data == a.data
                && t.t_timer == a.t_timer
        })
}

/// Every changed transaction must be backed by a receipt the validator holds.
fn evidence(parent: &Block, block: &Block, r: &Replica) -> Judgement {
    let mut ready = true;
    for (old, new) in parent.transactions.iter().zip(&block.transactions) {
        if old.assign_type != new.assign_type
            || old.assign_wealth != new.assign_wealth
            || old.value != new.value
            || old.from != new.from
            || old.data != new.data
            || old.t_timer != new.t_timer
        {
            return Judgement::Drop(format!("assignment `{}` altered", new.assign_id));
        }
        let accepting = old.tran_state == TranState::Initiation && new.tran_state == TranState::Acceptance;
        if old.to != new.to && !accepting {
            return Judgement::Drop(format!("recipient of `{}` changed", new.assign_id));
        }
        let key = (new.assign_id.clone(), new.to.clone());
        match (old.tran_state, new.tran_state) {
            (TranState::Initiation, TranState::Acceptance) => ready &= r.acks.contains(&key),
            (TranState::Acceptance, TranState::Completion) => ready &= r.results.contains(&key),
            _ => {}
        }
    }
    if ready {
        Judgement::Accept
    } else {
        Judgement::Wait
    }
}
