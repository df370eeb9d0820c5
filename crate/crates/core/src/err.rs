//! Relevancy ranking of tasks and service nodes, and task/node matchmaking.
//!
//! A ranking score is `Σ w_i · s_i / n_i` over a fixed list of factors whose
//! weights sum to one. Tasks are scored on six factors, service nodes on three.
//! Matchmaking pairs a task with the node whose score is closest to it.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amount::Cftx;
use crate::ids::NodeId;

/// Tolerance on the weight sum of a profile.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Relevancy gaps are compared on this grid so that the selection order is a
/// strict total order independent of float noise.
pub const GAP_RESOLUTION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RankingError {
    #[error("factor {index}: normalization coefficient must be positive, got {norm}")]
    NonPositiveNorm { index: usize, norm: f64 },
    #[error("factor {index}: weight must lie in [0, 1], got {weight}")]
    WeightOutOfRange { index: usize, weight: f64 },
    #[error("factor {index}: score must be finite and nonnegative, got {score}")]
    BadScore { index: usize, score: f64 },
    #[error("factor weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("expected {expected} factors, got {got}")]
    FactorCount { expected: usize, got: usize },
    #[error("no candidate nodes to match against")]
    NoCandidate,
    #[error("`{0}` has no recorded ranking")]
    Unknown(String),
}

/// One factor: raw score, weight and normalization coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorScore {
    pub score: f64,
    pub weight: f64,
    pub norm: f64,
}

impl FactorScore {
    pub fn new(score: f64, weight: f64, norm: f64) -> Self {
        Self { score, weight, norm }
    }

    fn validate(&self, index: usize) -> Result<(), RankingError> {
        if !(self.norm > 0.0 && self.norm.is_finite()) {
            return Err(RankingError::NonPositiveNorm { index, norm: self.norm });
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(RankingError::WeightOutOfRange {
                index,
                weight: self.weight,
            });
        }
        if !(self.score >= 0.0 && self.score.is_finite()) {
            return Err(RankingError::BadScore {
                index,
                score: self.score,
            });
        }
        Ok(())
    }

    pub fn contribution(&self) -> f64 {
        self.weight * self.score / self.norm
    }
}

/// A validated list of `N` weighted factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingProfile<const N: usize> {
    factors: [FactorScore; N],
}

/// Time criticalness, computing intensity, transaction frequency,
/// transaction scale, required propagation, data requirement.
pub type TaskRankingProfile = RankingProfile<6>;

/// Consistency, computability, deterministicness.
pub type NodeRankingProfile = RankingProfile<3>;

impl<const N: usize> RankingProfile<N> {
    pub fn new(factors: [FactorScore; N]) -> Result<Self, RankingError> {
        for (i, f) in factors.iter().enumerate() {
            f.validate(i)?;
        }
        let sum: f64 = factors.iter().map(|f| f.weight).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(RankingError::WeightSum(sum));
        }
        Ok(Self { factors })
    }

    pub fn from_slice(factors: &[FactorScore]) -> Result<Self, RankingError> {
        let arr: [FactorScore; N] = factors.try_into().map_err(|_| RankingError::FactorCount {
            expected: N,
            got: factors.len(),
        })?;
        Self::new(arr)
    }

    pub fn factors(&self) -> &[FactorScore; N] {
        &self.factors
    }

    /// `Σ w · s / n`.
    pub fn score(&self) -> f64 {
        self.factors.iter().map(FactorScore::contribution).sum()
    }
}

impl<const N: usize> Serialize for RankingProfile<N> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.factors.as_slice().serialize(serializer)
    }
}

impl<'de, const N: usize> Deserialize<'de> for RankingProfile<N> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = Vec::<FactorScore>::deserialize(deserializer)?;
        Self::from_slice(&raw).map_err(serde::de::Error::custom)
    }
}

/// Ranking score of a task.
pub fn task_err_score(profile: &TaskRankingProfile) -> f64 {
    profile.score()
}

/// Ranking score of a service node.
pub fn node_err_score(profile: &NodeRankingProfile) -> f64 {
    profile.score()
}

/// A service node competing for a task.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: NodeId,
    pub score: f64,
    pub wealth: Cftx,
}

impl Candidate {
    pub fn new(id: impl Into<NodeId>, score: f64, wealth: Cftx) -> Self {
        Self {
            id: id.into(),
            score,
            wealth,
        }
    }
}

/// `|node score − task score|` snapped to [`GAP_RESOLUTION`].
pub fn relevancy_gap(task_score: f64, node_score: f64) -> u64 {
    ((node_score - task_score).abs() / GAP_RESOLUTION).round() as u64
}

/// Relevancy first, then lower wealth, then node id.
pub fn relevancy_order(task_score: f64, a: &Candidate, b: &Candidate) -> Ordering {
    relevancy_gap(task_score, a.score)
        .cmp(&relevancy_gap(task_score, b.score))
        .then(a.wealth.cmp(&b.wealth))
        .then_with(|| a.id.cmp(&b.id))
}

/// Picks the candidate whose score is closest to the task's.
pub fn matchmake(task_score: f64, candidates: &[Candidate]) -> Result<NodeId, RankingError> {
    candidates
        .iter()
        .min_by(|a, b| relevancy_order(task_score, a, b))
        .map(|c| c.id.clone())
        .ok_or(RankingError::NoCandidate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingKind {
    Task,
    ServiceNode,
}

impl fmt::Display for RankingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankingKind::Task => "task",
            RankingKind::ServiceNode => "service-node",
        })
    }
}

/// A recorded profile submission. Entries are only ever appended.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingEvent<const N: usize> {
    pub seq: u64,
    pub id: String,
    pub profile: RankingProfile<N>,
    pub score: f64,
}

/// Ranking table for tasks (`N = 6`) or service nodes (`N = 3`).
#[derive(Debug, Clone, PartialEq)]
pub struct RankingTable<const N: usize> {
    kind: RankingKind,
    current: BTreeMap<String, (RankingProfile<N>, f64)>,
    history: Vec<RankingEvent<N>>,
}

pub type TaskRankingTable = RankingTable<6>;
pub type NodeRankingTable = RankingTable<3>;

impl<const N: usize> RankingTable<N> {
    pub fn new(kind: RankingKind) -> Self {
        Self {
            kind,
            current: BTreeMap::new(),
            history: Vec::new(),
        }
    }

    pub fn kind(&self) -> RankingKind {
        self.kind
    }

    /// Records a new profile for `id` and returns its score. A later
    /// submission supersedes the current score but the old event is kept.
    pub fn submit(&mut self, id: impl Into<String>, profile: RankingProfile<N>) -> f64 {
        let id = id.into();
        let score = profile.score();
        self.history.push(RankingEvent {
            seq: self.history.len() as u64,
            id: id.clone(),
            profile,
            score,
        });
        self.current.insert(id, (profile, score));
        score
    }

    pub fn score(&self, id: &str) -> Result<f64, RankingError> {
        self.current
            .get(id)
            .map(|(_, s)| *s)
            .ok_or_else(|| RankingError::Unknown(id.to_string()))
    }

    pub fn history(&self) -> &[RankingEvent<N>] {
        &self.history
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, f64)> {
        self.current.iter().map(|(k, (_, s))| (k.as_str(), *s))
    }

    /// True when every stored score equals the score recomputed from its profile.
    pub fn verify(&self) -> bool {
        self.current.values().all(|(p, s)| p.score() == *s) && self.history.iter().all(|e| e.profile.score() == e.score)
    }

    /// One line per entry: id, kind, score (6 decimals).
    pub fn to_records(&self) -> String {
        self.current
            .iter()
            .map(|(id, (_, s))| format!("{id}\t{}\t{s:.6}\n", self.kind))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn task(scores: [f64; 6], weights: [f64; 6], norms: [f64; 6]) -> TaskRankingProfile {
        let mut f = [FactorScore::new(0.0, 0.0, 1.0); 6];
        for i in 0..6 {
            f[i] = FactorScore::new(scores[i], weights[i], norms[i]);
        }
        RankingProfile::new(f).unwrap()
    }

    const TASK_NORMS: [f64; 6] = [100.0, 100.0, 1e6, 10.0, 1000.0, 100.0];

    #[test]
    fn task_table_scores() {
        let t1 = task(
            [100.0, 25.0, 5000.0, 5.0, 350.0, 50.0],
            [0.15, 0.15, 0.25, 0.25, 0.15, 0.05],
            TASK_NORMS,
        );
        let ti = task(
            [50.0, 75.0, 250_000.0, 8.0, 500.0, 75.0],
            [0.05, 0.25, 0.25, 0.25, 0.15, 0.05],
            TASK_NORMS,
        );
        let tn = task(
            [75.0, 100.0, 100_000.0, 3.0, 150.0, 25.0],
            [0.25, 0.15, 0.15, 0.15, 0.15, 0.15],
            TASK_NORMS,
        );
        assert!((task_err_score(&t1) - 0.39125).abs() < 1e-12);
        assert!((task_err_score(&ti) - 0.5875).abs() < 1e-12);
        assert!((task_err_score(&tn) - 0.4575).abs() < 1e-12);
    }

    #[test]
    fn node_table_scores() {
        let node = |s: [f64; 3], w: [f64; 3]| {
            NodeRankingProfile::new([
                FactorScore::new(s[0], w[0], 100.0),
                FactorScore::new(s[1], w[1], 100.0),
                FactorScore::new(s[2], w[2], 100.0),
            ])
            .unwrap()
        };
        assert!((node_err_score(&node([50.0, 50.0, 50.0], [0.5, 0.3, 0.2])) - 0.50).abs() < 1e-12);
        assert!((node_err_score(&node([25.0, 60.0, 50.0], [0.7, 0.2, 0.1])) - 0.345).abs() < 1e-12);
        assert!((node_err_score(&node([35.0, 75.0, 85.0], [0.25, 0.3, 0.45])) - 0.695).abs() < 1e-12);
    }

    #[test]
    fn profile_validation() {
        let bad_sum = NodeRankingProfile::new([FactorScore::new(1.0, 0.5, 1.0); 3]);
        assert!(matches!(bad_sum, Err(RankingError::WeightSum(_))));
        let bad_norm = NodeRankingProfile::new([
            FactorScore::new(1.0, 0.5, 0.0),
            FactorScore::new(1.0, 0.5, 1.0),
            FactorScore::new(1.0, 0.0, 1.0),
        ]);
        assert!(matches!(bad_norm, Err(RankingError::NonPositiveNorm { index: 0, .. })));
        assert!(matches!(
            TaskRankingProfile::from_slice(&[FactorScore::new(1.0, 1.0, 1.0)]),
            Err(RankingError::FactorCount { expected: 6, got: 1 })
        ));
    }

    #[test]
    fn matchmake_examples() {
        let cands = [
            Candidate::new("A", 0.50, Cftx::ZERO),
            Candidate::new("B", 0.345, Cftx::ZERO),
            Candidate::new("C", 0.695, Cftx::ZERO),
        ];
        // exhaustive |diff| scan as the oracle
        let best = cands
            .iter()
            .min_by(|a, b| (a.score - 0.39125f64).abs().total_cmp(&(b.score - 0.39125f64).abs()))
            .unwrap();
        assert_eq!(best.id, NodeId::new("B"));
        assert_eq!(matchmake(0.39125, &cands).unwrap(), NodeId::new("B"));

        assert_eq!(
            matchmake(0.9, &[Candidate::new("N", 0.1, Cftx::whole(3))]).unwrap(),
            NodeId::new("N")
        );

        let tied = [
            Candidate::new("P", 0.44, Cftx::whole(10)),
            Candidate::new("Q", 0.34, Cftx::whole(5)),
        ];
        assert_eq!(matchmake(0.39, &tied).unwrap(), NodeId::new("Q"));
        assert_eq!(matchmake(0.5, &[]), Err(RankingError::NoCandidate));
    }

    #[test]
    fn table_is_append_only_and_recomputable() {
        let mut t = NodeRankingTable::new(RankingKind::ServiceNode);
        let p = NodeRankingProfile::new([
            FactorScore::new(50.0, 0.5, 100.0),
            FactorScore::new(50.0, 0.3, 100.0),
            FactorScore::new(50.0, 0.2, 100.0),
        ])
        .unwrap();
        t.submit("super-1", p);
        let q = NodeRankingProfile::new([
            FactorScore::new(35.0, 0.25, 100.0),
            FactorScore::new(75.0, 0.3, 100.0),
            FactorScore::new(85.0, 0.45, 100.0),
        ])
        .unwrap();
        t.submit("super-1", q);
        assert_eq!(t.history().len(), 2);
        assert!((t.score("super-1").unwrap() - 0.695).abs() < 1e-12);
        assert!(t.verify());
        assert_eq!(t.to_records(), "super-1\tservice-node\t0.695000\n");
        assert!(t.score("nobody").is_err());
    }

    fn node_profile() -> impl Strategy<Value = ([f64; 3], [f64; 3], [f64; 3])> {
        (
            prop::array::uniform3(0.0f64..1000.0),
            prop::array::uniform3(0.01f64..1.0),
            prop::array::uniform3(0.1f64..1000.0),
        )
    }

    proptest! {
        #[test]
        fn affine_scaling_leaves_score(raw in node_profile(), c in 0.01f64..100.0) {
            let (s, w, n) = raw;
            let total: f64 = w.iter().sum();
            let w = w.map(|x| x / total);
            let build = |k: f64| {
                NodeRankingProfile::new([
                    FactorScore::new(s[0] * k, w[0], n[0] * k),
                    FactorScore::new(s[1] * k, w[1], n[1] * k),
                    FactorScore::new(s[2] * k, w[2], n[2] * k),
                ])
            };
            if let (Ok(a), Ok(b)) = (build(1.0), build(c)) {
                prop_assert!((a.score() - b.score()).abs() <= 1e-9 * a.score().max(1.0));
            }
        }

        #[test]
        fn matchmake_returns_a_closest(task in 0.0f64..1.0,
                                       nodes in prop::collection::vec((0.0f64..1.0, 0i64..100), 1..10)) {
            let cands: Vec<Candidate> = nodes
                .iter()
                .enumerate()
                .map(|(i, (s, w))| Candidate::new(format!("n{i}"), *s, Cftx::whole(*w)))
                .collect();
            let chosen = matchmake(task, &cands).unwrap();
            let c = cands.iter().find(|c| c.id == chosen).unwrap();
            for other in &cands {
                prop_assert!((c.score - task).abs() <= (other.score - task).abs() + GAP_RESOLUTION);
            }
        }
    }
}
