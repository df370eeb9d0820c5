//! Token issuance and reward policy.
//!
//! Covers genesis supply, per-task issuance netted against the VAT ledger,
//! proportional reward splits between super nodes and resource nodes,
//! validator selection by relevancy then wealth, the fairness tariff on
//! dominating nodes, and the true-up burn of undistributed tokens.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amount::{AmountError, Cftx};
use crate::err::{relevancy_order, Candidate};
use crate::ids::{NodeId, TaskId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("genesis supply must be nonnegative, got {0}")]
    NegativeGenesis(Cftx),
    #[error("issuance would make circulating supply negative")]
    NegativeCirculation,
    #[error("cannot burn {requested}: only {circulating} circulating")]
    OverBurn { requested: Cftx, circulating: Cftx },
    #[error("burn amount must be nonnegative, got {0}")]
    NegativeBurn(Cftx),
    #[error("task wealth must be nonnegative, got {0}")]
    NegativeTaskWealth(Cftx),
    #[error("{what} must lie in [0, 1], got {value}")]
    Fraction { what: &'static str, value: f64 },
    #[error("contribution weight for `{node}` must be finite and nonnegative, got {weight}")]
    BadWeight { node: NodeId, weight: f64 },
    #[error("every contribution weight in the {0} pool is zero")]
    DegenerateSplit(&'static str),
    #[error("need {needed} service nodes, only {available} candidates")]
    InsufficientNodes { needed: usize, available: usize },
    #[error("selection size must be at least 1")]
    EmptySelection,
    #[error(transparent)]
    Amount(#[from] AmountError),
}

fn fraction(what: &'static str, value: f64) -> Result<f64, PolicyError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(PolicyError::Fraction { what, value })
    }
}

/// Token supply. `circulating = genesis + issued − burned` by construction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSupply {
    pub genesis: Cftx,
    pub issued: Cftx,
    pub burned: Cftx,
}

impl TokenSupply {
    pub fn circulating(&self) -> Cftx {
        self.genesis + self.issued - self.burned
    }
}

/// Signed VAT balance: liability positive, credit negative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VatLedger {
    pub balance: Cftx,
}

/// Issues the initial supply equal to the ecosystem's initial value.
pub fn genesis_issue(initial_value: Cftx) -> Result<TokenSupply, PolicyError> {
    if initial_value.is_negative() {
        return Err(PolicyError::NegativeGenesis(initial_value));
    }
    Ok(TokenSupply {
        genesis: initial_value,
        issued: Cftx::ZERO,
        burned: Cftx::ZERO,
    })
}

/// Result of one issuance round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Issuance {
    pub supply: TokenSupply,
    pub vat: VatLedger,
    /// Fresh tokens actually minted this round.
    pub minted: Cftx,
}

/// Issues tokens for a task's value increment.
///
/// A positive increment is netted against the VAT balance, which then resets
/// (a liability larger than the increment carries its remainder forward).
/// A negative increment mints nothing and is posted to the VAT ledger as credit.
pub fn task_issue(supply: TokenSupply, increment: Cftx, vat: VatLedger) -> Result<Issuance, PolicyError> {
    let mut supply = supply;
    let mut vat = vat;
    let mut minted = Cftx::ZERO;
    if increment > Cftx::ZERO {
        let net = increment.checked_sub(vat.balance)?;
        if net.is_negative() {
            vat.balance = -net;
        } else {
            minted = net;
            vat.balance = Cftx::ZERO;
        }
    } else if increment < Cftx::ZERO {
        vat.balance = vat.balance.checked_add(increment)?;
    }
    supply.issued = supply.issued.checked_add(minted)?;
    if supply.circulating().is_negative() {
        return Err(PolicyError::NegativeCirculation);
    }
    Ok(Issuance { supply, vat, minted })
}

/// Burns tokens that were created but never awarded.
pub fn true_up(supply: TokenSupply, unawarded: Cftx) -> Result<TokenSupply, PolicyError> {
    if unawarded.is_negative() {
        return Err(PolicyError::NegativeBurn(unawarded));
    }
    let circulating = supply.circulating();
    if unawarded > circulating {
        return Err(PolicyError::OverBurn {
            requested: unawarded,
            circulating,
        });
    }
    Ok(TokenSupply {
        burned: supply.burned.checked_add(unawarded)?,
        ..supply
    })
}

/// How a task's wealth is shared out.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardSplit {
    pub task_wealth: Cftx,
    /// Fraction of the task wealth reserved for the task validators and handler.
    pub super_share: f64,
    pub super_contributions: BTreeMap<NodeId, f64>,
    pub resource_contributions: BTreeMap<NodeId, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RewardOutcome {
    pub awards: BTreeMap<NodeId, Cftx>,
    /// Rounding remainder plus any pool with no members; burned at true-up.
    pub dust: Cftx,
}

impl RewardOutcome {
    pub fn total_awarded(&self) -> Cftx {
        self.awards.values().copied().sum()
    }
}

fn split_pool(
    pool: Cftx,
    contributions: &BTreeMap<NodeId, f64>,
    name: &'static str,
    out: &mut RewardOutcome,
) -> Result<(), PolicyError> {
    for (node, w) in contributions {
        if !(w.is_finite() && *w >= 0.0) {
            return Err(PolicyError::BadWeight {
                node: node.clone(),
                weight: *w,
            });
        }
    }
    if contributions.is_empty() {
        out.dust = out.dust.checked_add(pool)?;
        return Ok(());
    }
    let weights: Vec<f64> = contributions.values().copied().collect();
    let (parts, dust) = pool.split_floor(&weights).ok_or(PolicyError::DegenerateSplit(name))?;
    for (node, part) in contributions.keys().zip(parts) {
        let slot = out.awards.entry(node.clone()).or_insert(Cftx::ZERO);
        *slot = slot.checked_add(part)?;
    }
    out.dust = out.dust.checked_add(dust)?;
    Ok(())
}

/// Splits a task's wealth into a super-node pool and a resource pool, each
/// shared proportionally to contribution weight and rounded down.
pub fn distribute_rewards(split: &RewardSplit) -> Result<RewardOutcome, PolicyError> {
    if split.task_wealth.is_negative() {
        return Err(PolicyError::NegativeTaskWealth(split.task_wealth));
    }
    let share = fraction("super share", split.super_share)?;
    let super_pool = split.task_wealth.mul_fraction_floor(share)?;
    let resource_pool = split.task_wealth.checked_sub(super_pool)?;
    let mut out = RewardOutcome::default();
    split_pool(super_pool, &split.super_contributions, "super-node", &mut out)?;
    split_pool(resource_pool, &split.resource_contributions, "resource", &mut out)?;
    Ok(out)
}

/// The validator set chosen for a task and its handler.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServiceSelection {
    pub members: Vec<NodeId>,
    pub handler: NodeId,
}

/// Orders candidates by relevancy gap, then wealth, then id, and keeps the
/// first `k`. The poorest member becomes the handler.
pub fn select_service_nodes(
    task_score: f64,
    candidates: &[Candidate],
    k: usize,
) -> Result<ServiceSelection, PolicyError> {
    if k == 0 {
        return Err(PolicyError::EmptySelection);
    }
    if candidates.len() < k {
        return Err(PolicyError::InsufficientNodes {
            needed: k,
            available: candidates.len(),
        });
    }
    let mut ranked: Vec<&Candidate> = candidates.iter().collect();
    ranked.sort_by(|a, b| relevancy_order(task_score, a, b));
    ranked.truncate(k);
    let handler = ranked
        .iter()
        .min_by(|a, b| a.wealth.cmp(&b.wealth).then_with(|| a.id.cmp(&b.id)))
        .map(|c| c.id.clone())
        .expect("k >= 1");
    Ok(ServiceSelection {
        members: ranked.into_iter().map(|c| c.id.clone()).collect(),
        handler,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TariffOutcome {
    pub awards: BTreeMap<NodeId, Cftx>,
    pub levies: BTreeMap<NodeId, Cftx>,
    /// Levy that could not be redistributed; burned at true-up.
    pub held: Cftx,
}

/// Levies `tariff_rate` of this round's award on every node whose cumulative
/// award share (history plus this round) exceeds `dominance_threshold`, and
/// shares the levy equally among the non-dominating participants.
pub fn apply_fairness_tariff(
    awards: &BTreeMap<NodeId, Cftx>,
    cumulative: &BTreeMap<NodeId, Cftx>,
    dominance_threshold: f64,
    tariff_rate: f64,
) -> Result<TariffOutcome, PolicyError> {
    let threshold = fraction("dominance threshold", dominance_threshold)?;
    let rate = fraction("tariff rate", tariff_rate)?;
    let round_total: Cftx = awards.values().copied().sum();
    let history_total: Cftx = cumulative.values().copied().sum();
    let grand = round_total.checked_add(history_total)?;
    let mut out = TariffOutcome {
        awards: awards.clone(),
        ..Default::default()
    };
    if grand <= Cftx::ZERO {
        return Ok(out);
    }

    let mut dominating = BTreeSet::new();
    for (node, award) in awards {
        let past = cumulative.get(node).copied().unwrap_or(Cftx::ZERO);
        let share = (past + *award).to_f64() / grand.to_f64();
        if share > threshold {
            dominating.insert(node.clone());
        }
    }
    if dominating.is_empty() {
        return Ok(out);
    }

    let mut pot = Cftx::ZERO;
    for node in &dominating {
        let award = awards[node];
        let levy = award.mul_fraction_floor(rate)?;
        if levy.is_zero() {
            continue;
        }
        *out.awards.get_mut(node).expect("dominating node has an award") = award - levy;
        out.levies.insert(node.clone(), levy);
        pot = pot.checked_add(levy)?;
    }

    let recipients: Vec<&NodeId> = awards.keys().filter(|n| !dominating.contains(*n)).collect();
    if recipients.is_empty() {
        out.held = pot;
        return Ok(out);
    }
    let (parts, dust) = pot
        .split_floor(&vec![1.0; recipients.len()])
        .expect("equal weights are nonzero");
    for (node, part) in recipients.into_iter().zip(parts) {
        let slot = out.awards.get_mut(node).expect("recipient is a participant");
        *slot = slot.checked_add(part)?;
    }
    out.held = dust;
    Ok(out)
}

/// Tunable policy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    pub super_share: f64,
    pub dominance_threshold: f64,
    pub tariff_rate: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            super_share: 0.2,
            dominance_threshold: 0.5,
            tariff_rate: 0.1,
        }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<(), PolicyError> {
        fraction("super share", self.super_share)?;
        fraction("dominance threshold", self.dominance_threshold)?;
        fraction("tariff rate", self.tariff_rate)?;
        Ok(())
    }
}

/// One audit record per issuance, award, levy or burn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum AuditEvent {
    Genesis {
        amount: Cftx,
    },
    Issue {
        task: TaskId,
        increment: Cftx,
        minted: Cftx,
        vat_balance: Cftx,
    },
    Award {
        task: TaskId,
        node: NodeId,
        amount: Cftx,
    },
    Tariff {
        task: TaskId,
        node: NodeId,
        levy: Cftx,
    },
    Burn {
        task: Option<TaskId>,
        amount: Cftx,
    },
}

/// Outcome of settling one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settlement {
    pub task_wealth: Cftx,
    pub awards: BTreeMap<NodeId, Cftx>,
    pub levies: BTreeMap<NodeId, Cftx>,
    /// Rounding dust plus held levies, burned by the settlement's true-up.
    pub burned: Cftx,
}

/// Single-writer policy state: supply, VAT ledger and award history.
/// Every method is all-or-nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Dpoev {
    params: PolicyParams,
    supply: TokenSupply,
    vat: VatLedger,
    cumulative: BTreeMap<NodeId, Cftx>,
    events: Vec<AuditEvent>,
}

impl Dpoev {
    pub fn genesis(params: PolicyParams, initial_value: Cftx) -> Result<Self, PolicyError> {
        params.validate()?;
        let supply = genesis_issue(initial_value)?;
        Ok(Self {
            params,
            supply,
            vat: VatLedger::default(),
            cumulative: BTreeMap::new(),
            events: vec![AuditEvent::Genesis { amount: initial_value }],
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn supply(&self) -> TokenSupply {
        self.supply
    }

    pub fn vat(&self) -> VatLedger {
        self.vat
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    pub fn cumulative_awards(&self) -> &BTreeMap<NodeId, Cftx> {
        &self.cumulative
    }

    /// Mints tokens for a task increment; returns the amount minted.
    pub fn issue(&mut self, task: &TaskId, increment: Cftx) -> Result<Cftx, PolicyError> {
        let out = task_issue(self.supply, increment, self.vat)?;
        self.supply = out.supply;
        self.vat = out.vat;
        self.events.push(AuditEvent::Issue {
            task: task.clone(),
            increment,
            minted: out.minted,
            vat_balance: out.vat.balance,
        });
        Ok(out.minted)
    }

    /// Distributes `task_wealth`, applies the fairness tariff, and burns what
    /// was not awarded. `Σ awards + burned = task_wealth` exactly.
    pub fn settle(
        &mut self,
        task: &TaskId,
        task_wealth: Cftx,
        super_contributions: BTreeMap<NodeId, f64>,
        resource_contributions: BTreeMap<NodeId, f64>,
    ) -> Result<Settlement, PolicyError> {
        let rewards = distribute_rewards(&RewardSplit {
            task_wealth,
            super_share: self.params.super_share,
            super_contributions,
            resource_contributions,
        })?;
        let tariff = apply_fairness_tariff(
            &rewards.awards,
            &self.cumulative,
            self.params.dominance_threshold,
            self.params.tariff_rate,
        )?;
        let burned = rewards.dust.checked_add(tariff.held)?;
        let supply = true_up(self.supply, burned)?;

        self.supply = supply;
        for (node, amount) in &tariff.awards {
            let slot = self.cumulative.entry(node.clone()).or_insert(Cftx::ZERO);
            *slot = *slot + *amount;
            self.events.push(AuditEvent::Award {
                task: task.clone(),
                node: node.clone(),
                amount: *amount,
            });
        }
        for (node, levy) in &tariff.levies {
            self.events.push(AuditEvent::Tariff {
                task: task.clone(),
                node: node.clone(),
                levy: *levy,
            });
        }
        if !burned.is_zero() {
            self.events.push(AuditEvent::Burn {
                task: Some(task.clone()),
                amount: burned,
            });
        }
        Ok(Settlement {
            task_wealth,
            awards: tariff.awards,
            levies: tariff.levies,
            burned,
        })
    }

    /// Burns surplus tokens outside of a task settlement.
    pub fn burn(&mut self, amount: Cftx) -> Result<(), PolicyError> {
        self.supply = true_up(self.supply, amount)?;
        self.events.push(AuditEvent::Burn { task: None, amount });
        Ok(())
    }
}
