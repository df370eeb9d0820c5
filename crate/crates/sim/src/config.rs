//! Scenario configuration, loaded from TOML and validated field by field.

use std::collections::BTreeSet;
use std::fmt;

use blockcloud_core::bft::{DccParams, Preferences, ProtocolCatalog};
use blockcloud_core::err::{FactorScore, NodeRankingProfile, TaskRankingProfile};
use blockcloud_core::policy::PolicyParams;
use blockcloud_core::Cftx;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Super,
    Tasking,
    Computing,
    Storage,
}

impl Role {
    pub fn prefix(self) -> &'static str {
        match self {
            Role::Super => "super",
            Role::Tasking => "tasker",
            Role::Computing => "computing",
            Role::Storage => "storage",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    #[default]
    Honest,
    Silent,
    Equivocator,
    Briber,
    DoubleSpender,
}

impl Behavior {
    pub fn is_byzantine(self) -> bool {
        self != Behavior::Honest
    }
}

/// What the tasking node answers when an assignment ran out of retries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExhaustedPolicy {
    #[default]
    Abandon,
    Redistribute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    pub nodes: NodesConfig,
    #[serde(default)]
    pub behaviors: Vec<BehaviorEntry>,
    #[serde(default)]
    pub latency: LatencyConfig,
    #[serde(default)]
    pub timers: TimerConfig,
    #[serde(default)]
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub policy: PolicyParams,
    #[serde(default)]
    pub dcc: DccParams,
    #[serde(default)]
    pub bft: BftConfig,
    #[serde(default)]
    pub fault_injection: FaultInjection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodesConfig {
    pub supers: usize,
    #[serde(default = "one")]
    pub taskers: usize,
    #[serde(default = "one")]
    pub computing: usize,
    #[serde(default)]
    pub storage: usize,
    /// Initial CFTX of every node without an override.
    #[serde(default = "default_wealth")]
    pub wealth: Cftx,
    #[serde(default = "default_validators")]
    pub validators_per_task: usize,
    #[serde(default, rename = "override")]
    pub overrides: Vec<NodeOverride>,
}

fn one() -> usize {
    1
}

fn default_wealth() -> Cftx {
    Cftx::whole(1_000)
}

fn default_validators() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeOverride {
    pub id: String,
    #[serde(default)]
    pub wealth: Option<Cftx>,
    /// Consistency, computability, deterministicness as `[score, weight, norm]`.
    #[serde(default)]
    pub profile: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorEntry {
    pub node: String,
    pub behavior: Behavior,
    /// Node that bribed blocks redirect assignments to; defaults to the briber.
    #[serde(default)]
    pub beneficiary: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyConfig {
    pub min_us: u64,
    pub max_us: u64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            min_us: 1_000,
            max_us: 5_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimerConfig {
    pub b_timer_us: u64,
    pub t_timer_us: u64,
    pub ack_rounds: u32,
    /// Resource-node work time is drawn uniformly from this range.
    pub work_min_us: u64,
    pub work_max_us: u64,
}

impl Default for TimerConfig {
    fn default() -> Self {
        Self {
            b_timer_us: 10_000_000,
            t_timer_us: 2_000_000,
            ack_rounds: 3,
            work_min_us: 10_000,
            work_max_us: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub id: String,
    #[serde(default = "default_tasker")]
    pub tasker: String,
    #[serde(default)]
    pub at_us: u64,
    pub wealth: Cftx,
    #[serde(default)]
    pub increment: Cftx,
    /// Six `[score, weight, norm]` factors; uniform mid-range when absent.
    #[serde(default)]
    pub profile: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub b_timer_us: Option<u64>,
    #[serde(default)]
    pub on_exhausted: ExhaustedPolicy,
    pub assignments: Vec<AssignmentConfig>,
}

fn default_tasker() -> String {
    "tasker-0".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssignKind {
    Computing,
    Storage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentConfig {
    pub id: String,
    #[serde(default = "default_kind")]
    pub kind: AssignKind,
    pub wealth: Cftx,
    #[serde(default)]
    pub value: Cftx,
    #[serde(default = "one")]
    pub replicas: usize,
    #[serde(default)]
    pub data: String,
    #[serde(default)]
    pub t_timer_us: Option<u64>,
}

fn default_kind() -> AssignKind {
    AssignKind::Computing
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BftConfig {
    #[serde(default)]
    pub catalog: Option<ProtocolCatalog>,
    pub preferences: Preferences,
}

impl Default for BftConfig {
    fn default() -> Self {
        Self {
            catalog: None,
            preferences: Preferences::new(vec![true, false, false], vec![0.4, 0.4, 0.2]),
        }
    }
}

impl BftConfig {
    pub fn catalog(&self) -> ProtocolCatalog {
        self.catalog.clone().unwrap_or_else(ProtocolCatalog::builtin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FaultInjection {
    /// Credits one micro-CFTX out of thin air after the last settlement.
    pub conservation_breach: bool,
}

pub(crate) fn parse_factors<const N: usize>(
    raw: &[[f64; 3]],
) -> Result<blockcloud_core::err::RankingProfile<N>, String> {
    let factors: Vec<FactorScore> = raw.iter().map(|[s, w, n]| FactorScore::new(*s, *w, *n)).collect();
    blockcloud_core::err::RankingProfile::<N>::from_slice(&factors).map_err(|e| e.to_string())
}

/// Uniform profile with every factor at `score` out of 1.
pub fn uniform_profile<const N: usize>(score: f64) -> blockcloud_core::err::RankingProfile<N> {
    let w = 1.0 / N as f64;
    let mut factors = [FactorScore::new(score, w, 1.0); N];
    // keep the weights summing to exactly one
    factors[N - 1].weight = 1.0 - w * (N - 1) as f64;
    blockcloud_core::err::RankingProfile::new(factors).expect("uniform profile is valid")
}

impl TaskConfig {
    pub fn ranking_profile(&self) -> TaskRankingProfile {
        match &self.profile {
            Some(raw) => parse_factors::<6>(raw).expect("validated"),
            None => uniform_profile::<6>(0.5),
        }
    }
}

impl NodeOverride {
    pub fn ranking_profile(&self) -> Option<NodeRankingProfile> {
        self.profile
            .as_ref()
            .map(|raw| parse_factors::<3>(raw).expect("validated"))
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every node id in creation order: supers, taskers, computing, storage.
    pub fn node_ids(&self) -> Vec<(String, Role)> {
        let n = &self.nodes;
        [
            (Role::Super, n.supers),
            (Role::Tasking, n.taskers),
            (Role::Computing, n.computing),
            (Role::Storage, n.storage),
        ]
        .into_iter()
        .flat_map(|(role, count)| (0..count).map(move |i| (format!("{}-{i}", role.prefix()), role)))
        .collect()
    }

    pub fn behavior_of(&self, node: &str) -> Behavior {
        self.behaviors
            .iter()
            .find(|b| b.node == node)
            .map_or(Behavior::Honest, |b| b.behavior)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let mut err = |field: String, message: String| errs.push(FieldError { field, message });
        let n = &self.nodes;
        let ids: Vec<(String, Role)> = self.node_ids();
        let role_of = |id: &str| ids.iter().find(|(n, _)| n == id).map(|(_, r)| *r);

        if n.supers == 0 {
            err("nodes.supers".into(), "at least one super node is required".into());
        }
        if n.validators_per_task == 0 {
            err("nodes.validators_per_task".into(), "must be at least 1".into());
        } else if n.validators_per_task > n.supers {
            err(
                "nodes.validators_per_task".into(),
                format!("{} exceeds the {} super nodes", n.validators_per_task, n.supers),
            );
        }
        if n.wealth.is_negative() {
            err("nodes.wealth".into(), "must not be negative".into());
        }
        let mut seen = BTreeSet::new();
        for (i, o) in n.overrides.iter().enumerate() {
            let field = format!("nodes.override[{i}]");
            if role_of(&o.id).is_none() {
                err(format!("{field}.id"), format!("unknown node `{}`", o.id));
            }
            if !seen.insert(o.id.as_str()) {
                err(format!("{field}.id"), format!("node `{}` overridden twice", o.id));
            }
            if o.wealth.is_some_and(Cftx::is_negative) {
                err(format!("{field}.wealth"), "must not be negative".into());
            }
            if let Some(raw) = &o.profile {
                if let Err(e) = parse_factors::<3>(raw) {
                    err(format!("{field}.profile"), e);
                }
            }
        }

        let mut seen = BTreeSet::new();
        for (i, b) in self.behaviors.iter().enumerate() {
            let field = format!("behaviors[{i}]");
            let Some(role) = role_of(&b.node) else {
                err(format!("{field}.node"), format!("unknown node `{}`", b.node));
                continue;
            };
            if !seen.insert(b.node.as_str()) {
                err(format!("{field}.node"), format!("node `{}` listed twice", b.node));
            }
            let allowed = match role {
                Role::Super => matches!(
                    b.behavior,
                    Behavior::Honest | Behavior::Silent | Behavior::Equivocator | Behavior::Briber
                ),
                Role::Tasking => matches!(b.behavior, Behavior::Honest | Behavior::DoubleSpender),
                Role::Computing | Role::Storage => matches!(b.behavior, Behavior::Honest | Behavior::Silent),
            };
            if !allowed {
                err(
                    format!("{field}.behavior"),
                    format!("{:?} is not a behavior of a {:?} node", b.behavior, role),
                );
            }
            if let Some(ben) = &b.beneficiary {
                if b.behavior != Behavior::Briber {
                    err(format!("{field}.beneficiary"), "only bribers have a beneficiary".into());
                }
                if role_of(ben).is_none() {
                    err(format!("{field}.beneficiary"), format!("unknown node `{ben}`"));
                }
            }
        }

        if self.latency.min_us == 0 {
            err("latency.min_us".into(), "must be positive".into());
        }
        if self.latency.max_us < self.latency.min_us {
            err("latency.max_us".into(), "must be at least latency.min_us".into());
        }
        let t = &self.timers;
        if t.b_timer_us == 0 {
            err("timers.b_timer_us".into(), "must be positive".into());
        }
        if t.t_timer_us == 0 {
            err("timers.t_timer_us".into(), "must be positive".into());
        }
        if t.work_max_us < t.work_min_us {
            err(
                "timers.work_max_us".into(),
                "must be at least timers.work_min_us".into(),
            );
        }

        let mut task_ids = BTreeSet::new();
        for (i, task) in self.tasks.iter().enumerate() {
            let field = format!("tasks[{i}]");
            if task.id.is_empty() {
                err(format!("{field}.id"), "must not be empty".into());
            }
            if !task_ids.insert(task.id.as_str()) {
                err(format!("{field}.id"), format!("duplicate task id `{}`", task.id));
            }
            if role_of(&task.tasker) != Some(Role::Tasking) {
                err(
                    format!("{field}.tasker"),
                    format!("`{}` is not a tasking node", task.tasker),
                );
            }
            if task.wealth.is_negative() {
                err(format!("{field}.wealth"), "must not be negative".into());
            }
            if task.b_timer_us == Some(0) {
                err(format!("{field}.b_timer_us"), "must be positive".into());
            }
            if let Some(raw) = &task.profile {
                if let Err(e) = parse_factors::<6>(raw) {
                    err(format!("{field}.profile"), e);
                }
            }
            if task.assignments.is_empty() {
                err(
                    format!("{field}.assignments"),
                    "a task needs at least one assignment".into(),
                );
            }
            let mut assign_ids = BTreeSet::new();
            for (j, a) in task.assignments.iter().enumerate() {
                let field = format!("{field}.assignments[{j}]");
                if a.id.is_empty() {
                    err(format!("{field}.id"), "must not be empty".into());
                }
                if !assign_ids.insert(a.id.as_str()) {
                    err(format!("{field}.id"), format!("duplicate assignment id `{}`", a.id));
                }
                if a.wealth.is_negative() || a.value.is_negative() {
                    err(field.clone(), "amounts must not be negative".into());
                }
                if a.replicas == 0 {
                    err(format!("{field}.replicas"), "must be at least 1".into());
                }
                let pool = match a.kind {
                    AssignKind::Computing => n.computing,
                    AssignKind::Storage => n.storage,
                };
                if a.replicas > pool {
                    err(
                        format!("{field}.replicas"),
                        format!("{} replicas but only {pool} {:?} nodes", a.replicas, a.kind),
                    );
                }
                if a.t_timer_us == Some(0) {
                    err(format!("{field}.t_timer_us"), "must be positive".into());
                }
            }
        }

        if let Err(e) = self.policy.validate() {
            err("policy".into(), e.to_string());
        }
        if let Err(e) = self.dcc.validate() {
            err("dcc".into(), e.to_string());
        }
        let catalog = self.bft.catalog();
        if let Err(e) = catalog.validate() {
            err("bft.catalog".into(), e.to_string());
        } else if let Err(e) = self.bft.preferences.validate(&catalog) {
            err("bft.preferences".into(), e.to_string());
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}
