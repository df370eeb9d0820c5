//! Attack scenarios. Each runs a scenario with misbehaving nodes next to its
//! honest baseline and reports what, if anything, the attacker changed.

use std::collections::BTreeSet;

use blockcloud_core::chain::{max_faulty, Equivocation, VoteType};
use blockcloud_core::{Cftx, NodeId, TaskId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{AssignKind, AssignmentConfig, Behavior, BehaviorEntry, NodeOverride, ScenarioConfig, TaskConfig};
use crate::outcome::{extract_equivocations, RunOutput};
use crate::run_scenario;

/// Gap between consecutive tasks in the attack scenarios.
pub const TASK_SPACING_US: u64 = 2_000_000;

/// Wealth given to colluding validators so that none of them is ever the
/// poorest shard member, which would make it the handler.
const COLLUDER_WEALTH: i64 = 2_000;

fn base(supers: usize, k: usize, taskers: usize, computing: usize) -> ScenarioConfig {
    let text = format!(
        "[nodes]\nsupers = {supers}\nvalidators_per_task = {k}\ntaskers = {taskers}\ncomputing = {computing}\n"
    );
    ScenarioConfig::from_toml(&text).expect("well-formed base scenario")
}

fn task(i: usize, tasker: String, wealth: i64, profile: Option<Vec<[f64; 3]>>) -> TaskConfig {
    TaskConfig {
        id: format!("task-{i}"),
        tasker,
        at_us: 1_000 + i as u64 * TASK_SPACING_US,
        wealth: Cftx::whole(wealth),
        increment: Cftx::whole(wealth / 10),
        profile,
        b_timer_us: None,
        on_exhausted: Default::default(),
        assignments: vec![AssignmentConfig {
            id: "a0".into(),
            kind: AssignKind::Computing,
            wealth: Cftx::whole(wealth / 2),
            value: Cftx::whole(1),
            replicas: 1,
            data: format!("job-{i}"),
            t_timer_us: None,
        }],
    }
}

fn behave(node: &str, behavior: Behavior, beneficiary: Option<&str>) -> BehaviorEntry {
    BehaviorEntry {
        node: node.into(),
        behavior,
        beneficiary: beneficiary.map(str::to_string),
    }
}

fn enrich(cfg: &mut ScenarioConfig, node: &str) {
    cfg.nodes.overrides.push(NodeOverride {
        id: node.into(),
        wealth: Some(Cftx::whole(COLLUDER_WEALTH)),
        profile: None,
    });
}

/// The same scenario with every node honest.
pub fn honest_baseline(cfg: &ScenarioConfig) -> ScenarioConfig {
    let mut out = cfg.clone();
    out.behaviors.clear();
    out
}

// ---- fault bound -----------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FaultTrial {
    pub n: usize,
    pub seed: u64,
    pub byzantine: BTreeSet<NodeId>,
    pub handler: NodeId,
    /// Heights where honest validators finalized different blocks.
    pub conflicts: Vec<(TaskId, u64)>,
    /// Conflicting Prepare pairs recovered from the event log.
    pub evidence: Vec<(TaskId, Equivocation)>,
}

impl FaultTrial {
    pub fn forked(&self) -> bool {
        !self.conflicts.is_empty()
    }

    /// Every fork is explained by a byzantine validator that signed two
    /// different Prepare votes at the forked height.
    pub fn evidence_covers_forks(&self) -> bool {
        self.conflicts.iter().all(|(task, h)| {
            self.evidence.iter().any(|(t, ev)| {
                t == task
                    && ev.first.hv == *h
                    && ev.first.vote_type == VoteType::Prepare
                    && ev.first.vote_hash != ev.second.vote_hash
                    && self.byzantine.contains(&ev.validator)
            })
        })
    }
}

/// One task served by all `n` super nodes, submitted by a double-spending
/// tasker, with `byzantine` equivocating validators. When `byzantine`
/// exceeds the fault bound the handler is always among them. Returns the
/// scenario, its handler and the byzantine set.
pub fn fault_scenario(n: usize, byzantine: usize, seed: u64) -> (ScenarioConfig, NodeId, BTreeSet<NodeId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_fa17);
    let mut cfg = base(n, n, 1, 2);
    let supers: Vec<String> = (0..n).map(|i| format!("super-{i}")).collect();
    for s in &supers {
        cfg.nodes.overrides.push(NodeOverride {
            id: s.clone(),
            wealth: Some(Cftx::whole(rng.gen_range(500..1_500))),
            profile: None,
        });
    }
    let handler = cfg
        .nodes
        .overrides
        .iter()
        .min_by(|a, b| a.wealth.cmp(&b.wealth).then_with(|| a.id.cmp(&b.id)))
        .map(|o| o.id.clone())
        .expect("n >= 1");
    let mut others: Vec<&String> = supers.iter().filter(|s| **s != handler).collect();
    others.shuffle(&mut rng);
    let include_handler = byzantine > max_faulty(n) || rng.gen_bool(0.5);
    let mut byz: Vec<String> = Vec::new();
    if include_handler && byzantine > 0 {
        byz.push(handler.clone());
    }
    byz.extend(others.into_iter().take(byzantine - byz.len()).cloned());
    cfg.behaviors = byz.iter().map(|b| behave(b, Behavior::Equivocator, None)).collect();
    cfg.behaviors.push(behave("tasker-0", Behavior::DoubleSpender, None));
    cfg.tasks = vec![task(0, "tasker-0".into(), 100, None)];
    (cfg, NodeId::new(handler), byz.into_iter().map(NodeId::new).collect())
}

/// Runs [`fault_scenario`] and collects forks and equivocation evidence.
pub fn fault_trial(n: usize, byzantine: usize, seed: u64) -> FaultTrial {
    let (cfg, handler, byzantine) = fault_scenario(n, byzantine, seed);
    let out = run_scenario(&cfg, seed).expect("fault trial scenario is valid");
    FaultTrial {
        n,
        seed,
        byzantine,
        handler,
        conflicts: out.conflicts(),
        evidence: extract_equivocations(&out.log.to_text()),
    }
}

// ---- ledger-diff attacks ---------------------------------------------------

#[derive(Debug, Clone)]
pub struct AttackVerdict {
    pub name: &'static str,
    /// Differences between the attacked and the honest finalized ledgers.
    pub ledger_diff: Vec<String>,
    /// Heights where two different blocks were finalized.
    pub conflicts: usize,
    /// Conflicting requests noticed by validators.
    pub conflicts_detected: usize,
    pub equivocations_detected: usize,
    pub bribe_attempts: usize,
    pub tariff_events: usize,
    pub max_wealth_share: f64,
    pub invariants_hold: bool,
}

impl AttackVerdict {
    pub fn repelled(&self) -> bool {
        self.ledger_diff.is_empty() && self.conflicts == 0 && self.invariants_hold
    }
}

fn compare(name: &'static str, cfg: &ScenarioConfig, seed: u64) -> (AttackVerdict, RunOutput) {
    let attacked = run_scenario(cfg, seed).expect("attack scenario is valid");
    let honest = run_scenario(&honest_baseline(cfg), seed).expect("baseline scenario is valid");
    let verdict = AttackVerdict {
        name,
        ledger_diff: attacked.ledger.diff(&honest.ledger),
        conflicts: attacked.conflicts().len(),
        conflicts_detected: attacked
            .log
            .lines()
            .iter()
            .filter(|l| l.contains("\"event\":\"conflict-detected\""))
            .count(),
        equivocations_detected: attacked.summary.equivocations_detected,
        bribe_attempts: attacked.bribe_attempts,
        tariff_events: attacked.summary.tariff_events,
        max_wealth_share: attacked.summary.max_wealth_share,
        invariants_hold: attacked.summary.verdicts.all_hold(),
    };
    (verdict, attacked)
}

/// A double-spending tasker with `colluders` equivocating validators in a
/// shard of `supers` nodes.
pub fn double_spend_scenario(supers: usize, colluders: usize, tasks: usize) -> ScenarioConfig {
    let mut cfg = base(supers, supers, 1, 2);
    cfg.behaviors.push(behave("tasker-0", Behavior::DoubleSpender, None));
    for i in 0..colluders {
        let id = format!("super-{}", supers - 1 - i);
        enrich(&mut cfg, &id);
        cfg.behaviors.push(behave(&id, Behavior::Equivocator, None));
    }
    cfg.nodes.overrides.push(NodeOverride {
        id: "tasker-0".into(),
        wealth: Some(Cftx::whole(100 * tasks as i64 + 1_000)),
        profile: None,
    });
    cfg.tasks = (0..tasks).map(|i| task(i, "tasker-0".into(), 100, None)).collect();
    cfg
}

/// `bribed` validators rewrite the latest two blocks of every task in favour
/// of `super-{supers-1}`.
pub fn short_range_scenario(supers: usize, bribed: usize, tasks: usize) -> ScenarioConfig {
    let mut cfg = base(supers, supers, 1, 2);
    let beneficiary = format!("super-{}", supers - 1);
    for i in 0..bribed {
        let id = format!("super-{}", supers - 1 - i);
        cfg.behaviors.push(behave(&id, Behavior::Briber, Some(&beneficiary)));
    }
    cfg.nodes.overrides.push(NodeOverride {
        id: "tasker-0".into(),
        wealth: Some(Cftx::whole(100 * tasks as i64 + 1_000)),
        profile: None,
    });
    cfg.tasks = (0..tasks).map(|i| task(i, "tasker-0".into(), 100, None)).collect();
    cfg
}

/// A resource node whose profile matches every task, backed by `bribed`
/// validators that redirect assignments to it.
pub fn majority_scenario(supers: usize, bribed: usize, tasks: usize) -> ScenarioConfig {
    let mut cfg = base(supers, supers, 3, 3);
    let greedy = "computing-0";
    // tasks all score 0.5; so does this profile
    cfg.nodes.overrides.push(NodeOverride {
        id: greedy.into(),
        wealth: None,
        profile: Some(vec![[0.5, 0.25, 1.0], [0.5, 0.25, 1.0], [0.5, 0.5, 1.0]]),
    });
    for i in 0..bribed {
        let id = format!("super-{}", supers - 1 - i);
        cfg.behaviors.push(behave(&id, Behavior::Briber, Some(greedy)));
    }
    cfg.tasks = (0..tasks)
        .map(|i| task(i, format!("tasker-{}", i % 3), 60, None))
        .collect();
    cfg
}

pub fn attack_double_spend(cfg: &ScenarioConfig, seed: u64) -> AttackVerdict {
    compare("double-spend", cfg, seed).0
}

pub fn attack_short_range(cfg: &ScenarioConfig, seed: u64) -> AttackVerdict {
    compare("short-range", cfg, seed).0
}

pub fn attack_51(cfg: &ScenarioConfig, seed: u64) -> AttackVerdict {
    compare("51-percent", cfg, seed).0
}

// ---- shard takeover --------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TakeoverVerdict {
    pub trials: usize,
    /// Shards that included the attacking node.
    pub landed: usize,
}

impl TakeoverVerdict {
    pub fn share(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.landed as f64 / self.trials as f64
        }
    }
}

/// Runs `trials` single-task scenarios with freshly drawn node and task
/// profiles and counts the shards that `super-0` ends up in.
pub fn attack_shard_takeover(supers: usize, k: usize, trials: usize, base_seed: u64) -> TakeoverVerdict {
    let attacker = NodeId::new("super-0");
    let mut landed = 0;
    for t in 0..trials {
        let seed = base_seed.wrapping_add(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a5c_0000);
        let profile: Vec<[f64; 3]> = (0..6).map(|_| [rng.gen::<f64>(), 1.0 / 6.0, 1.0]).collect();
        let mut cfg = base(supers, k, 1, 1);
        cfg.tasks = vec![task(0, "tasker-0".into(), 10, Some(profile))];
        let out = run_scenario(&cfg, seed).expect("takeover scenario is valid");
        if out.shards.iter().any(|s| s.validators.contains(&attacker)) {
            landed += 1;
        }
    }
    TakeoverVerdict { trials, landed }
}
