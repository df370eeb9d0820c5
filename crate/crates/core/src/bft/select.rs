//! Protocol scoring: a KCI pass/fail mask times a weighted, normalized KPI score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::err::WEIGHT_SUM_TOLERANCE;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectError {
    #[error("{what}: expected {expected} entries, got {got}")]
    Dimension { what: String, expected: usize, got: usize },
    #[error("no protocols to evaluate")]
    Empty,
    #[error("KPI `{column}` of `{protocol}` must be finite and nonnegative, got {value}")]
    BadKpi {
        protocol: String,
        column: usize,
        value: f64,
    },
    #[error("{what} must be nonnegative and sum to 1, got sum {sum}")]
    WeightSum { what: &'static str, sum: f64 },
    #[error("no protocol satisfies the required characteristics")]
    NoViableProtocol,
    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),
}

/// Whether larger KPI values are better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KpiDirection {
    HigherBetter,
    LowerBetter,
}

/// Throughput (tx/s), latency (s), client capacity.
pub const DEFAULT_KPI_DIRECTIONS: [KpiDirection; 3] = [
    KpiDirection::HigherBetter,
    KpiDirection::LowerBetter,
    KpiDirection::HigherBetter,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolProfile {
    pub name: String,
    pub kci: Vec<bool>,
    pub kpi: Vec<f64>,
}

impl ProtocolProfile {
    pub fn new(name: impl Into<String>, kci: Vec<bool>, kpi: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            kci,
            kpi,
        }
    }
}

/// A set of protocol profiles sharing the same KCI and KPI columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolCatalog {
    pub kci_names: Vec<String>,
    pub kpi_directions: Vec<KpiDirection>,
    pub profiles: Vec<ProtocolProfile>,
}

impl ProtocolCatalog {
    /// Eight common flavors with illustrative desk-scale numbers.
    ///
    /// KCIs: tolerates faulty clients, optimal resilience (n = 3f + 1),
    /// no speculative execution.
    pub fn builtin() -> Self {
        let p = |name: &str, kci: [bool; 3], kpi: [f64; 3]| ProtocolProfile::new(name, kci.to_vec(), kpi.to_vec());
        Self {
            kci_names: vec![
                "faulty-clients".into(),
                "optimal-resilience".into(),
                "non-speculative".into(),
            ],
            kpi_directions: DEFAULT_KPI_DIRECTIONS.to_vec(),
            profiles: vec![
                p("PBFT", [true, true, true], [8_000.0, 0.012, 200.0]),
                p("Zyzzyva", [false, true, false], [14_000.0, 0.006, 120.0]),
                p("Q/U", [true, false, true], [6_000.0, 0.004, 40.0]),
                p("HQ", [true, true, true], [7_000.0, 0.005, 60.0]),
                p("Quorum", [false, true, true], [9_000.0, 0.003, 30.0]),
                p("Chain", [false, true, true], [16_000.0, 0.020, 80.0]),
                p("Ring", [false, true, true], [17_500.0, 0.030, 150.0]),
                p("RBFT", [true, true, true], [7_500.0, 0.015, 400.0]),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), SelectError> {
        if self.profiles.is_empty() {
            return Err(SelectError::Empty);
        }
        let m = self.kpi_directions.len();
        let k = self.kci_names.len();
        for prof in &self.profiles {
            check_len(&format!("KCI row of `{}`", prof.name), k, prof.kci.len())?;
            check_len(&format!("KPI row of `{}`", prof.name), m, prof.kpi.len())?;
            for (column, value) in prof.kpi.iter().copied().enumerate() {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(SelectError::BadKpi {
                        protocol: prof.name.clone(),
                        column,
                        value,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Result<usize, SelectError> {
        self.profiles
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| SelectError::UnknownProtocol(name.to_string()))
    }
}

/// User preferences: required KCIs (U), KPI weights (V) and optional
/// heuristic weights (W). Without W the heuristic factor is all ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preferences {
    pub kci_prefs: Vec<bool>,
    pub kpi_weights: Vec<f64>,
    #[serde(default)]
    pub heuristic_weights: Option<Vec<f64>>,
}

impl Preferences {
    pub fn new(kci_prefs: Vec<bool>, kpi_weights: Vec<f64>) -> Self {
        Self {
            kci_prefs,
            kpi_weights,
            heuristic_weights: None,
        }
    }

    pub fn with_heuristic(mut self, w: Vec<f64>) -> Self {
        self.heuristic_weights = Some(w);
        self
    }

    /// Number of required KCIs.
    pub fn required_count(&self) -> usize {
        self.kci_prefs.iter().filter(|u| **u).count()
    }

    fn effective_weights(&self) -> Vec<f64> {
        match &self.heuristic_weights {
            Some(w) => self.kpi_weights.iter().zip(w).map(|(v, w)| v * w).collect(),
            None => self.kpi_weights.clone(),
        }
    }

    pub fn validate(&self, catalog: &ProtocolCatalog) -> Result<(), SelectError> {
        check_len("KCI preferences", catalog.kci_names.len(), self.kci_prefs.len())?;
        let m = catalog.kpi_directions.len();
        check_len("KPI weights", m, self.kpi_weights.len())?;
        check_weights("KPI weights", &self.kpi_weights)?;
        if let Some(w) = &self.heuristic_weights {
            check_len("heuristic weights", m, w.len())?;
            check_weights("heuristic weights", w)?;
        }
        Ok(())
    }
}

fn check_len(what: &str, expected: usize, got: usize) -> Result<(), SelectError> {
    if expected == got {
        Ok(())
    } else {
        Err(SelectError::Dimension {
            what: what.to_string(),
            expected,
            got,
        })
    }
}

fn check_weights(what: &'static str, w: &[f64]) -> Result<(), SelectError> {
    let sum: f64 = w.iter().sum();
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(SelectError::WeightSum { what, sum });
    }
    Ok(())
}

/// Per-protocol pass/fail (C), KPI score (P) and their product (E).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub c: Vec<u8>,
    pub p: Vec<f64>,
    pub e: Vec<f64>,
}

/// `C_i = 1` iff protocol `i` has every required KCI. No requirements pass all.
pub fn kci_filter(catalog: &ProtocolCatalog, prefs: &Preferences) -> Result<Vec<u8>, SelectError> {
    catalog.validate()?;
    check_len("KCI preferences", catalog.kci_names.len(), prefs.kci_prefs.len())?;
    Ok(catalog
        .profiles
        .iter()
        .map(|p| {
            let ok = prefs
                .kci_prefs
                .iter()
                .zip(&p.kci)
                .all(|(required, has)| !*required || *has);
            u8::from(ok)
        })
        .collect())
}

/// Column-normalizes the KPI matrix and returns `P = B± · (V ∘ W)`.
pub fn kpi_score(catalog: &ProtocolCatalog, prefs: &Preferences) -> Result<Vec<f64>, SelectError> {
    catalog.validate()?;
    prefs.validate(catalog)?;
    let weights = prefs.effective_weights();
    let n = catalog.profiles.len();
    let mut p = vec![0.0; n];
    for (j, dir) in catalog.kpi_directions.iter().enumerate() {
        let column: Vec<f64> = catalog.profiles.iter().map(|r| r.kpi[j]).collect();
        let normalized: Vec<f64> = match dir {
            KpiDirection::HigherBetter => {
                let max = column.iter().copied().fold(0.0, f64::max);
                if max > 0.0 {
                    column.iter().map(|x| x / max).collect()
                } else {
                    vec![0.0; n]
                }
            }
            KpiDirection::LowerBetter => {
                let min = column.iter().copied().fold(f64::INFINITY, f64::min);
                if min > 0.0 {
                    column.iter().map(|x| min / x).collect()
                } else {
                    vec![0.0; n]
                }
            }
        };
        for (pi, b) in p.iter_mut().zip(normalized) {
            *pi += b * weights[j];
        }
    }
    Ok(p)
}

/// Index of the largest score; the first declared protocol wins ties.
pub fn select(e: &[f64]) -> Result<usize, SelectError> {
    if e.is_empty() {
        return Err(SelectError::Empty);
    }
    let mut best = 0;
    for (i, v) in e.iter().enumerate() {
        if *v > e[best] {
            best = i;
        }
    }
    if e[best] > 0.0 {
        Ok(best)
    } else {
        Err(SelectError::NoViableProtocol)
    }
}

/// Evaluates every protocol and picks the winner.
pub fn choose(catalog: &ProtocolCatalog, prefs: &Preferences) -> Result<(usize, Evaluation), SelectError> {
    let c = kci_filter(catalog, prefs)?;
    let p = kpi_score(catalog, prefs)?;
    let e: Vec<f64> = c.iter().zip(&p).map(|(c, p)| f64::from(*c) * p).collect();
    let idx = select(&e)?;
    Ok((idx, Evaluation { c, p, e }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn catalog(kci: Vec<Vec<bool>>, kpi: Vec<Vec<f64>>, dirs: Vec<KpiDirection>) -> ProtocolCatalog {
        let k = kci.first().map_or(0, Vec::len);
        ProtocolCatalog {
            kci_names: (0..k).map(|i| format!("k{i}")).collect(),
            kpi_directions: dirs,
            profiles: kci
                .into_iter()
                .zip(kpi)
                .enumerate()
                .map(|(i, (a, b))| ProtocolProfile::new(format!("p{i}"), a, b))
                .collect(),
        }
    }

    #[test]
    fn kci_examples() {
        let cat = catalog(
            vec![vec![true, true], vec![true, false]],
            vec![vec![1.0], vec![1.0]],
            vec![KpiDirection::HigherBetter],
        );
        let prefs = Preferences::new(vec![true, false], vec![1.0]);
        assert_eq!(kci_filter(&cat, &prefs).unwrap(), vec![1, 1]);
        let none = Preferences::new(vec![false, false], vec![1.0]);
        assert_eq!(kci_filter(&cat, &none).unwrap(), vec![1, 1]);

        let single = catalog(
            vec![vec![false, true]],
            vec![vec![1.0]],
            vec![KpiDirection::HigherBetter],
        );
        assert_eq!(kci_filter(&single, &prefs).unwrap(), vec![0]);
        let bad = Preferences::new(vec![true], vec![1.0]);
        assert!(matches!(kci_filter(&cat, &bad), Err(SelectError::Dimension { .. })));
    }

    #[test]
    fn kpi_examples() {
        // rows already normalized: column maxima are 1
        let cat = catalog(
            vec![vec![], vec![]],
            vec![vec![1.0, 0.5], vec![0.8, 1.0]],
            vec![KpiDirection::HigherBetter; 2],
        );
        let prefs = Preferences::new(vec![], vec![0.7, 0.3]);
        let p = kpi_score(&cat, &prefs).unwrap();
        assert!((p[0] - 0.85).abs() < 1e-12);
        assert!((p[1] - 0.86).abs() < 1e-12);
        let (idx, eval) = choose(&cat, &prefs).unwrap();
        assert_eq!(idx, 1);
        assert_eq!(eval.c, vec![1, 1]);

        let one = catalog(
            vec![vec![]],
            vec![vec![42.0, 3.0]],
            vec![KpiDirection::HigherBetter, KpiDirection::LowerBetter],
        );
        let p = kpi_score(&one, &Preferences::new(vec![], vec![0.0, 1.0])).unwrap();
        assert_eq!(p, vec![1.0]);

        let same = catalog(
            vec![vec![], vec![], vec![]],
            vec![vec![5.0, 2.0]; 3],
            vec![KpiDirection::HigherBetter, KpiDirection::LowerBetter],
        );
        let p = kpi_score(&same, &Preferences::new(vec![], vec![0.5, 0.5])).unwrap();
        assert!(p.iter().all(|x| *x == p[0]));
    }

    #[test]
    fn lower_better_and_zero_columns() {
        let cat = catalog(
            vec![vec![], vec![]],
            vec![vec![0.0, 2.0], vec![0.0, 4.0]],
            vec![KpiDirection::HigherBetter, KpiDirection::LowerBetter],
        );
        let p = kpi_score(&cat, &Preferences::new(vec![], vec![0.5, 0.5])).unwrap();
        assert_eq!(p, vec![0.5, 0.25]);
        let zero_min = catalog(
            vec![vec![], vec![]],
            vec![vec![0.0], vec![3.0]],
            vec![KpiDirection::LowerBetter],
        );
        let p = kpi_score(&zero_min, &Preferences::new(vec![], vec![1.0])).unwrap();
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn select_examples() {
        assert_eq!(select(&[0.85, 0.86]).unwrap(), 1);
        assert_eq!(select(&[0.5]).unwrap(), 0);
        assert_eq!(select(&[0.0, 0.0]), Err(SelectError::NoViableProtocol));
        assert_eq!(select(&[0.3, 0.3]).unwrap(), 0);
        assert_eq!(select(&[]), Err(SelectError::Empty));
    }

    #[test]
    fn weights_validated() {
        let cat = ProtocolCatalog::builtin();
        let prefs = Preferences::new(vec![false; 3], vec![0.5, 0.5, 0.5]);
        assert!(matches!(kpi_score(&cat, &prefs), Err(SelectError::WeightSum { .. })));
        let heuristic = Preferences::new(vec![false; 3], vec![0.4, 0.3, 0.3]).with_heuristic(vec![0.2, 0.2]);
        assert!(matches!(
            kpi_score(&cat, &heuristic),
            Err(SelectError::Dimension { .. })
        ));
    }

    #[test]
    fn builtin_catalog_is_valid() {
        let cat = ProtocolCatalog::builtin();
        cat.validate().unwrap();
        let prefs = Preferences::new(vec![true, true, true], vec![0.4, 0.4, 0.2]);
        let (idx, eval) = choose(&cat, &prefs).unwrap();
        assert_eq!(eval.c.iter().filter(|c| **c == 1).count(), 3);
        assert_eq!(eval.c[idx], 1);
    }

    fn brute_force(cat: &ProtocolCatalog, prefs: &Preferences) -> Option<usize> {
        let w = prefs.effective_weights();
        let mut best: Option<(usize, f64)> = None;
        for (i, prof) in cat.profiles.iter().enumerate() {
            let passes = (0..prof.kci.len()).all(|j| !prefs.kci_prefs[j] || prof.kci[j]);
            let mut score = 0.0;
            #[allow(clippy::needless_range_loop)]
            for j in 0..prof.kpi.len() {
                let col = cat.profiles.iter().map(|q| q.kpi[j]);
                let b = match cat.kpi_directions[j] {
                    KpiDirection::HigherBetter => {
                        let mx = col.fold(0.0, f64::max);
                        if mx > 0.0 {
                            prof.kpi[j] / mx
                        } else {
                            0.0
                        }
                    }
                    KpiDirection::LowerBetter => {
                        let mn = col.fold(f64::INFINITY, f64::min);
                        if mn > 0.0 {
                            mn / prof.kpi[j]
                        } else {
                            0.0
                        }
                    }
                };
                score += b * w[j];
            }
            let e = if passes { score } else { 0.0 };
            if e > 0.0 && best.is_none_or(|(_, s)| e > s) {
                best = Some((i, e));
            }
        }
        best.map(|(i, _)| i)
    }

    fn instance() -> impl Strategy<Value = (ProtocolCatalog, Preferences)> {
        (1usize..=6, 1usize..=4, 0usize..=3).prop_flat_map(|(n, m, k)| {
            (
                prop::collection::vec(prop::collection::vec(any::<bool>(), k), n),
                prop::collection::vec(prop::collection::vec(0.0f64..100.0, m), n),
                prop::collection::vec(any::<bool>(), m),
                prop::collection::vec(any::<bool>(), k),
                prop::collection::vec(0.01f64..1.0, m),
            )
                .prop_map(|(kci, kpi, dirs, u, raw_w)| {
                    let dirs = dirs
                        .into_iter()
                        .map(|h| {
                            if h {
                                KpiDirection::HigherBetter
                            } else {
                                KpiDirection::LowerBetter
                            }
                        })
                        .collect();
                    let sum: f64 = raw_w.iter().sum();
                    let v = raw_w.iter().map(|x| x / sum).collect();
                    let mut cat = catalog(kci, kpi, dirs);
                    cat.kci_names = (0..u.len()).map(|i| format!("k{i}")).collect();
                    (cat, Preferences::new(u, v))
                })
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force((cat, prefs) in instance()) {
            let got = choose(&cat, &prefs).map(|(i, _)| i).ok();
            prop_assert_eq!(got, brute_force(&cat, &prefs));
        }

        #[test]
        fn column_scaling_keeps_winner((cat, prefs) in instance(), scale in prop::collection::vec(0.1f64..50.0, 4)) {
            let mut scaled = cat.clone();
            for prof in &mut scaled.profiles {
                for (j, x) in prof.kpi.iter_mut().enumerate() {
                    *x *= scale[j];
                }
            }
            let a = choose(&cat, &prefs).map(|(i, e)| (i, e.e));
            let b = choose(&scaled, &prefs).map(|(i, e)| (i, e.e));
            match (a, b) {
                (Ok((ia, ea)), Ok((ib, eb))) => {
                    // normalization cancels the scale up to rounding
                    for (x, y) in ea.iter().zip(&eb) {
                        prop_assert!((x - y).abs() < 1e-9);
                    }
                    let near_tie = ea.iter().filter(|x| (*x - ea[ia]).abs() < 1e-9).count() > 1;
                    if !near_tie {
                        prop_assert_eq!(ia, ib);
                    }
                }
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "scaling changed viability: {:?} vs {:?}", a, b),
            }
        }

        #[test]
        fn adding_a_requirement_never_admits((cat, prefs) in instance(), j in 0usize..3) {
            if j < prefs.kci_prefs.len() {
                let before = kci_filter(&cat, &prefs).unwrap();
                let mut stricter = prefs.clone();
                stricter.kci_prefs[j] = true;
                let after = kci_filter(&cat, &stricter).unwrap();
                for (b, a) in before.iter().zip(&after) {
                    prop_assert!(a <= b);
                }
            }
        }
    }
}
