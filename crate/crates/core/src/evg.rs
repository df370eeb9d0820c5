//! Economic value of knowledge and the node credit table.
//!
//! A node's initial value is the product of its probability-weighted
//! knowledge pieces; a task's incremental value is the probability-weighted
//! product minus the covariance-weighted product. The credit table keeps one
//! row per node: initial value, the per-task increments, and their total.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amount::{AmountError, Cftx};
use crate::ids::NodeId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvgError {
    #[error("knowledge value must be nonnegative, got {0}")]
    NegativeValue(Cftx),
    #[error("{what} must lie in [0, 1], got {value}")]
    OutOfUnitRange { what: &'static str, value: f64 },
    #[error("node `{0}` is not in the credit table")]
    UnknownNode(NodeId),
    #[error("node `{0}` already has a credit row")]
    DuplicateNode(NodeId),
    #[error("update of {delta} would drive node `{node}` total below zero")]
    NegativeTotal { node: NodeId, delta: Cftx },
    #[error("malformed credit record on line {line}: {reason}")]
    Record { line: usize, reason: String },
    #[error(transparent)]
    Amount(#[from] AmountError),
}

fn unit(what: &'static str, value: f64) -> Result<f64, EvgError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(EvgError::OutOfUnitRange { what, value })
    }
}

/// One piece of a node's initial knowledge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnowledgePiece {
    value: Cftx,
    cond_prob: f64,
}

impl KnowledgePiece {
    pub fn new(value: Cftx, cond_prob: f64) -> Result<Self, EvgError> {
        if value.is_negative() {
            return Err(EvgError::NegativeValue(value));
        }
        Ok(Self {
            value,
            cond_prob: unit("conditional probability", cond_prob)?,
        })
    }

    pub fn value(&self) -> Cftx {
        self.value
    }

    pub fn cond_prob(&self) -> f64 {
        self.cond_prob
    }
}

/// One piece of knowledge created (or destroyed) by a task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskKnowledgePiece {
    value: Cftx,
    cond_prob: f64,
    cond_cov: f64,
}

impl TaskKnowledgePiece {
    pub fn new(value: Cftx, cond_prob: f64, cond_cov: f64) -> Result<Self, EvgError> {
        if value.is_negative() {
            return Err(EvgError::NegativeValue(value));
        }
        Ok(Self {
            value,
            cond_prob: unit("conditional probability", cond_prob)?,
            cond_cov: unit("conditional covariance", cond_cov)?,
        })
    }

    pub fn value(&self) -> Cftx {
        self.value
    }

    pub fn cond_prob(&self) -> f64 {
        self.cond_prob
    }

    pub fn cond_cov(&self) -> f64 {
        self.cond_cov
    }
}

/// Product of `weight * value` over the pieces, in real arithmetic.
/// An empty sequence has no knowledge and therefore no value.
pub fn weighted_product<I>(terms: I) -> f64
where
    I: IntoIterator<Item = (f64, Cftx)>,
{
    let mut iter = terms.into_iter().peekable();
    if iter.peek().is_none() {
        return 0.0;
    }
    iter.map(|(w, v)| w * v.to_f64()).product()
}

/// Initial economic value of a node: `Π_j P_j · v_j`, empty → 0.
pub fn node_initial_value(pieces: &[KnowledgePiece]) -> Result<Cftx, EvgError> {
    let real = weighted_product(pieces.iter().map(|p| (p.cond_prob, p.value)));
    Ok(Cftx::from_f64(real)?)
}

/// Ecosystem initial value `V0`: sum of node values.
pub fn ecosystem_initial_value(node_values: &[Cftx]) -> Result<Cftx, EvgError> {
    node_values
        .iter()
        .try_fold(Cftx::ZERO, |acc, v| acc.checked_add(*v))
        .map_err(EvgError::from)
}

/// Incremental value of a task in real arithmetic:
/// `Π_k P_k · t_k − Π_k C_k · t_k`.
pub fn task_incremental_real(pieces: &[TaskKnowledgePiece]) -> f64 {
    let gain = weighted_product(pieces.iter().map(|p| (p.cond_prob, p.value)));
    let overlap = weighted_product(pieces.iter().map(|p| (p.cond_cov, p.value)));
    gain - overlap
}

/// Incremental value of a task in CFTX. Negative when the task destroys value.
pub fn task_incremental_value(pieces: &[TaskKnowledgePiece]) -> Result<Cftx, EvgError> {
    Ok(Cftx::from_f64(task_incremental_real(pieces))?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreditRow {
    pub initial: Cftx,
    pub increments: Vec<Cftx>,
    pub total: Cftx,
}

/// Per-node wealth map. `total = initial + Σ increments` for every row.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreditTable {
    rows: BTreeMap<NodeId, CreditRow>,
}

impl CreditTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_node(&mut self, node: NodeId, initial: Cftx) -> Result<(), EvgError> {
        if initial.is_negative() {
            return Err(EvgError::NegativeValue(initial));
        }
        if self.rows.contains_key(&node) {
            return Err(EvgError::DuplicateNode(node));
        }
        self.rows.insert(
            node,
            CreditRow {
                initial,
                increments: Vec::new(),
                total: initial,
            },
        );
        Ok(())
    }

    /// Records `delta` against `node`. Rejects updates that would leave the
    /// node with a negative total; the table is unchanged on error.
    pub fn apply_increment(&mut self, node: &NodeId, delta: Cftx) -> Result<(), EvgError> {
        let row = self
            .rows
            .get_mut(node)
            .ok_or_else(|| EvgError::UnknownNode(node.clone()))?;
        let total = row.total.checked_add(delta)?;
        if total.is_negative() {
            return Err(EvgError::NegativeTotal {
                node: node.clone(),
                delta,
            });
        }
        row.increments.push(delta);
        row.total = total;
        Ok(())
    }

    pub fn row(&self, node: &NodeId) -> Option<&CreditRow> {
        self.rows.get(node)
    }

    pub fn total_of(&self, node: &NodeId) -> Option<Cftx> {
        self.rows.get(node).map(|r| r.total)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&NodeId, &CreditRow)> {
        self.rows.iter()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `V0`.
    pub fn initial_total(&self) -> Cftx {
        self.rows.values().map(|r| r.initial).sum()
    }

    /// `T1`.
    pub fn increment_total(&self) -> Cftx {
        self.rows.values().flat_map(|r| r.increments.iter().copied()).sum()
    }

    /// `V1`.
    pub fn ecosystem_total(&self) -> Cftx {
        self.rows.values().map(|r| r.total).sum()
    }

    /// Checks `total = initial + Σ increments` row by row, and `total ≥ 0`.
    pub fn is_consistent(&self) -> bool {
        self.rows.values().all(|r| {
            let expect: Cftx = r.initial + r.increments.iter().copied().sum::<Cftx>();
            expect == r.total && !r.total.is_negative()
        })
    }

    /// One tab-separated line per node: id, initial, comma-joined increments, total.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for (id, row) in &self.rows {
            let incs: Vec<String> = row.increments.iter().map(Cftx::to_string).collect();
            out.push_str(&format!("{}\t{}\t{}\t{}\n", id, row.initial, incs.join(","), row.total));
        }
        out
    }

    pub fn from_records(text: &str) -> Result<Self, EvgError> {
        let mut table = CreditTable::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| EvgError::Record {
                line: i + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad("expected 4 tab-separated fields"));
            }
            let initial: Cftx = fields[1].parse().map_err(|_| bad("bad initial value"))?;
            let increments = if fields[2].is_empty() {
                Vec::new()
            } else {
                fields[2]
                    .split(',')
                    .map(|s| s.parse::<Cftx>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| bad("bad increment"))?
            };
            let total: Cftx = fields[3].parse().map_err(|_| bad("bad total"))?;
            let node = NodeId::new(fields[0]);
            table.insert_node(node.clone(), initial)?;
            for inc in increments {
                table.apply_increment(&node, inc)?;
            }
            if table.total_of(&node) != Some(total) {
                return Err(bad("total does not match initial plus increments"));
            }
        }
        Ok(table)
    }
}
