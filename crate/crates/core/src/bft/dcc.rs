//! DCC(1,1) correction of per-task KPI predictions.
//!
//! A cheap base predictor (an exponential moving average) forecasts the next
//! KPI vector. The residual of that forecast feeds a per-coordinate GARCH(1,1)
//! volatility and a dynamic conditional correlation, and the resulting
//! conditional variances are added to the next base forecast.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DccError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("value must be finite, got {0}")]
    NotFinite(f64),
    #[error("need a, b >= 0 with a + b < 1, got a = {a}, b = {b}")]
    Persistence { a: f64, b: f64 },
    #[error("{what} must be {requirement}")]
    Parameter {
        what: &'static str,
        requirement: &'static str,
    },
    #[error("numerical degeneracy: {0}")]
    Degenerate(&'static str),
    #[error("no observations to predict from")]
    EmptyHistory,
    #[error("smoothing factor must lie in (0, 1], got {0}")]
    Smoothing(f64),
}

/// Scalar model parameters, applied to every coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DccParams {
    pub a: f64,
    pub b: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub h0_sq: f64,
    /// EMA smoothing of the base predictor.
    pub alpha: f64,
}

impl Default for DccParams {
    fn default() -> Self {
        Self {
            a: 0.05,
            b: 0.90,
            kappa: 0.2,
            lambda: 0.7,
            h0_sq: 0.1,
            alpha: 0.3,
        }
    }
}

impl DccParams {
    pub fn validate(&self) -> Result<(), DccError> {
        let all = [self.a, self.b, self.kappa, self.lambda, self.h0_sq, self.alpha];
        if let Some(x) = all.iter().find(|x| !x.is_finite()) {
            return Err(DccError::NotFinite(*x));
        }
        if self.a < 0.0 || self.b < 0.0 || self.a + self.b >= 1.0 {
            return Err(DccError::Persistence { a: self.a, b: self.b });
        }
        if self.kappa < 0.0 || self.lambda < 0.0 {
            return Err(DccError::Parameter {
                what: "kappa and lambda",
                requirement: "nonnegative",
            });
        }
        if self.h0_sq <= 0.0 {
            return Err(DccError::Parameter {
                what: "h0_sq",
                requirement: "positive",
            });
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(DccError::Smoothing(self.alpha));
        }
        Ok(())
    }
}

/// Predicted minus observed KPI vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiResidual {
    pub e: DVector<f64>,
}

impl KpiResidual {
    pub fn zeros(m: usize) -> Self {
        Self { e: DVector::zeros(m) }
    }
}

pub fn residual(predicted: &[f64], observed: &[f64]) -> Result<KpiResidual, DccError> {
    if predicted.len() != observed.len() {
        return Err(DccError::Dimension {
            expected: predicted.len(),
            got: observed.len(),
        });
    }
    let e: Vec<f64> = predicted.iter().zip(observed).map(|(p, o)| p - o).collect();
    if let Some(x) = e.iter().find(|x| !x.is_finite()) {
        return Err(DccError::NotFinite(*x));
    }
    Ok(KpiResidual {
        e: DVector::from_vec(e),
    })
}

/// Model state for one KPI stream. `h_sq` holds the previous step's variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DccState {
    pub h_sq: DVector<f64>,
    pub o: DMatrix<f64>,
    pub o_bar: DMatrix<f64>,
    pub kappa: DVector<f64>,
    pub lambda: DVector<f64>,
    pub h0_sq: DVector<f64>,
    pub a: f64,
    pub b: f64,
}

impl DccState {
    /// Unit variances, identity long-run correlation.
    pub fn new(m: usize, params: &DccParams) -> Result<Self, DccError> {
        Self::with_o_bar(DMatrix::identity(m, m), params)
    }

    pub fn with_o_bar(o_bar: DMatrix<f64>, params: &DccParams) -> Result<Self, DccError> {
        params.validate()?;
        let m = o_bar.nrows();
        if o_bar.ncols() != m {
            return Err(DccError::Dimension {
                expected: m,
                got: o_bar.ncols(),
            });
        }
        if (&o_bar - o_bar.transpose()).amax() > 1e-12 {
            return Err(DccError::Degenerate("long-run correlation is not symmetric"));
        }
        if o_bar.nrows() > 0 && o_bar.clone().cholesky().is_none() {
            return Err(DccError::Degenerate("long-run correlation is not positive definite"));
        }
        Ok(Self {
            h_sq: DVector::from_element(m, 1.0),
            o: o_bar.clone(),
            o_bar,
            kappa: DVector::from_element(m, params.kappa),
            lambda: DVector::from_element(m, params.lambda),
            h0_sq: DVector::from_element(m, params.h0_sq),
            a: params.a,
            b: params.b,
        })
    }

    pub fn dim(&self) -> usize {
        self.h_sq.len()
    }
}

/// Conditional correlation `p`, covariance `omega` and standard deviations `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DccOutput {
    pub p: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub h: DVector<f64>,
}

/// Advances the model by one task using the previous task's residual.
pub fn dcc_step(state: &DccState, prev: &KpiResidual) -> Result<(DccState, DccOutput), DccError> {
    let m = state.dim();
    if prev.e.len() != m {
        return Err(DccError::Dimension {
            expected: m,
            got: prev.e.len(),
        });
    }
    if let Some(x) = prev.e.iter().find(|x| !x.is_finite()) {
        return Err(DccError::NotFinite(*x));
    }
    if state.h_sq.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(DccError::Degenerate("nonpositive previous variance"));
    }

    let e = &prev.e;
    let h_sq = DVector::from_fn(m, |i, _| {
        state.h0_sq[i] + state.kappa[i] * e[i] * e[i] + state.lambda[i] * state.h_sq[i]
    });
    if h_sq.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(DccError::Degenerate("nonpositive variance"));
    }
    let xi = DVector::from_fn(m, |i, _| e[i] / state.h_sq[i].sqrt());

    let o = &state.o_bar * (1.0 - state.a - state.b) + (&xi * xi.transpose()) * state.a + &state.o * state.b;
    let diag = o.diagonal();
    if diag.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(DccError::Degenerate("nonpositive correlation diagonal"));
    }
    let inv_sqrt = DVector::from_fn(m, |i, _| 1.0 / diag[i].sqrt());
    let mut p = DMatrix::from_fn(m, m, |i, j| inv_sqrt[i] * o[(i, j)] * inv_sqrt[j]);
    for i in 0..m {
        p[(i, i)] = 1.0;
        for j in 0..i {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    let h = h_sq.map(f64::sqrt);
    let omega = DMatrix::from_fn(m, m, |i, j| h[i] * p[(i, j)] * h[j]);

    let next = DccState {
        h_sq,
        o,
        ..state.clone()
    };
    Ok((next, DccOutput { p, omega, h }))
}

/// Adds the conditional variances to the base forecast.
pub fn predict(base: &[f64], output: &DccOutput) -> Result<Vec<f64>, DccError> {
    let m = output.omega.nrows();
    if base.len() != m {
        return Err(DccError::Dimension {
            expected: m,
            got: base.len(),
        });
    }
    Ok(base.iter().enumerate().map(|(i, b)| b + output.omega[(i, i)]).collect())
}

/// Exponential moving average over the observed KPI vectors, oldest first.
pub fn base_predict(history: &[Vec<f64>], alpha: f64) -> Result<Vec<f64>, DccError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(DccError::Smoothing(alpha));
    }
    let (first, rest) = history.split_first().ok_or(DccError::EmptyHistory)?;
    let mut s = first.clone();
    for obs in rest {
        if obs.len() != s.len() {
            return Err(DccError::Dimension {
                expected: s.len(),
                got: obs.len(),
            });
        }
        for (si, x) in s.iter_mut().zip(obs) {
            *si = (1.0 - alpha) * *si + alpha * x;
        }
    }
    Ok(s)
}

/// One step of a [`KpiStream`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamStep {
    pub residual: Vec<f64>,
    pub output: DccOutput,
    pub base: Vec<f64>,
    pub prediction: Vec<f64>,
}

/// Running base predictor plus DCC correction for one KPI stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiStream {
    state: DccState,
    alpha: f64,
    ema: Option<Vec<f64>>,
}

impl KpiStream {
    pub fn new(m: usize, params: &DccParams) -> Result<Self, DccError> {
        Ok(Self {
            state: DccState::new(m, params)?,
            alpha: params.alpha,
            ema: None,
        })
    }

    pub fn state(&self) -> &DccState {
        &self.state
    }

    /// Base forecast for the next task, if anything has been observed.
    pub fn base(&self) -> Option<&[f64]> {
        self.ema.as_deref()
    }

    /// Records an observation and returns the corrected forecast for the next task.
    pub fn observe(&mut self, observed: &[f64]) -> Result<StreamStep, DccError> {
        let m = self.state.dim();
        if observed.len() != m {
            return Err(DccError::Dimension {
                expected: m,
                got: observed.len(),
            });
        }
        let e = match &self.ema {
            Some(prev) => residual(prev, observed)?,
            None => KpiResidual::zeros(m),
        };
        let (state, output) = dcc_step(&self.state, &e)?;
        let base = match &self.ema {
            Some(prev) => base_predict(&[prev.clone(), observed.to_vec()], self.alpha)?,
            None => observed.to_vec(),
        };
        let prediction = predict(&base, &output)?;
        self.state = state;
        self.ema = Some(base.clone());
        Ok(StreamStep {
            residual: e.e.iter().copied().collect(),
            output,
            base,
            prediction,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(a: f64, b: f64) -> DccParams {
        DccParams {
            a,
            b,
            ..DccParams::default()
        }
    }

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn residual_examples() {
        assert_eq!(residual(&[1.0, 2.0], &[1.0, 2.0]).unwrap().e.as_slice(), &[0.0, 0.0]);
        assert_eq!(residual(&[3.0, 1.0], &[1.0, 2.0]).unwrap().e.as_slice(), &[2.0, -1.0]);
        assert!(residual(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn identity_fixed_point() {
        let s = DccState::new(2, &params(0.0, 0.0)).unwrap();
        let (next, out) = dcc_step(&s, &KpiResidual::zeros(2)).unwrap();
        assert!(close(&next.o, &DMatrix::identity(2, 2), 0.0));
        assert!(close(&out.p, &DMatrix::identity(2, 2), 0.0));
    }

    #[test]
    fn one_step_by_hand() {
        let s = DccState::new(2, &params(0.05, 0.9)).unwrap();
        let (next, out) = dcc_step(&s, &KpiResidual::zeros(2)).unwrap();
        assert!(close(&next.o, &(DMatrix::identity(2, 2) * 0.95), 1e-15));
        assert!(close(&out.p, &DMatrix::identity(2, 2), 1e-15));

        // unit previous variances make the standardized residual equal e
        let e = KpiResidual {
            e: DVector::from_vec(vec![1.0, 1.0]),
        };
        let (next, out) = dcc_step(&s, &e).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.05, 0.05, 1.0]);
        assert!(close(&next.o, &want, 1e-12));
        assert!(close(&out.p, &want, 1e-12));
    }

    #[test]
    fn variance_recursion_by_hand() {
        let s = DccState::new(1, &DccParams::default()).unwrap();
        let e = KpiResidual {
            e: DVector::from_vec(vec![1.0]),
        };
        let (next, out) = dcc_step(&s, &e).unwrap();
        assert!((next.h_sq[0] - 1.0).abs() < 1e-12);
        assert!((out.h[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn predict_examples() {
        let zero = DccOutput {
            p: DMatrix::identity(2, 2),
            omega: DMatrix::zeros(2, 2),
            h: DVector::zeros(2),
        };
        assert_eq!(predict(&[3.0, 4.0], &zero).unwrap(), vec![3.0, 4.0]);
        let out = DccOutput {
            p: DMatrix::identity(2, 2),
            omega: DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 0.25]),
            h: DVector::from_vec(vec![1.0, 0.5]),
        };
        assert_eq!(predict(&[10.0, 5.0], &out).unwrap(), vec![11.0, 5.25]);
        assert!(predict(&[1.0], &out).is_err());
    }

    #[test]
    fn base_predict_examples() {
        let v = vec![2.0, 7.0];
        assert_eq!(base_predict(std::slice::from_ref(&v), 0.3).unwrap(), v);
        assert_eq!(base_predict(&[v.clone(), v.clone(), v.clone()], 0.3).unwrap(), v);
        let got = base_predict(&[vec![10.0], vec![20.0]], 0.3).unwrap();
        assert!((got[0] - 13.0).abs() < 1e-12);
        assert_eq!(base_predict(&[], 0.3), Err(DccError::EmptyHistory));
    }

    #[test]
    fn parameters_validated() {
        assert!(DccState::new(2, &params(0.5, 0.5)).is_err());
        assert!(DccState::new(2, &params(-0.1, 0.5)).is_err());
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(DccState::with_o_bar(not_pd, &DccParams::default()).is_err());
    }

    #[test]
    fn zero_residuals_converge() {
        let p = params(0.05, 0.9);
        let o_bar = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, 1.0, 0.1, -0.2, 0.1, 1.0]);
        let mut s = DccState::with_o_bar(o_bar.clone(), &p).unwrap();
        for _ in 0..200 {
            s = dcc_step(&s, &KpiResidual::zeros(3)).unwrap().0;
        }
        let fixed = &o_bar * ((1.0 - p.a - p.b) / (1.0 - p.b));
        assert!(close(&s.o, &fixed, 1e-6));
    }

    #[test]
    fn stream_tracks_constant_series() {
        let mut st = KpiStream::new(2, &DccParams::default()).unwrap();
        let mut last = None;
        for _ in 0..50 {
            last = Some(st.observe(&[1.0, 1.0]).unwrap());
        }
        let step = last.unwrap();
        assert_eq!(step.base, vec![1.0, 1.0]);
        // variances settle at h0² / (1 − λ)
        let h_sq = DccParams::default().h0_sq / (1.0 - DccParams::default().lambda);
        assert!((step.prediction[0] - (1.0 + h_sq)).abs() < 1e-6);
    }

    fn residual_seq() -> impl Strategy<Value = (usize, Vec<Vec<f64>>)> {
        (1usize..=4).prop_flat_map(|m| {
            (
                Just(m),
                prop::collection::vec(prop::collection::vec(-5.0f64..5.0, m), 1..30),
            )
        })
    }

    proptest! {
        #[test]
        fn correlation_is_well_formed((m, seq) in residual_seq(), a in 0.0f64..0.3, b in 0.0f64..0.69) {
            let mut s = DccState::new(m, &params(a, b)).unwrap();
            for e in seq {
                let (next, out) = dcc_step(&s, &KpiResidual { e: DVector::from_vec(e) }).unwrap();
                for i in 0..m {
                    prop_assert_eq!(out.p[(i, i)], 1.0);
                    for j in 0..m {
                        prop_assert_eq!(out.p[(i, j)], out.p[(j, i)]);
                        prop_assert!(out.p[(i, j)].abs() <= 1.0 + 1e-9);
                    }
                }
                let eig = out.p.clone().symmetric_eigen();
                prop_assert!(eig.eigenvalues.iter().all(|l| *l >= -1e-9));
                let eo = out.omega.clone().symmetric_eigen();
                let scale = out.omega.amax().max(1.0);
                prop_assert!(eo.eigenvalues.iter().all(|l| *l >= -1e-9 * scale));
                s = next;
            }
        }

        #[test]
        fn step_is_deterministic((m, seq) in residual_seq()) {
            let s = DccState::new(m, &DccParams::default()).unwrap();
            let e = KpiResidual { e: DVector::from_vec(seq[0].clone()) };
            let (s1, o1) = dcc_step(&s, &e).unwrap();
            let (s2, o2) = dcc_step(&s, &e).unwrap();
            prop_assert_eq!(s1, s2);
            prop_assert_eq!(o1, o2);
        }

        #[test]
        fn residual_matches_loop(pairs in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 0..10)) {
            let (p, o): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let r = residual(&p, &o).unwrap();
            for i in 0..p.len() {
                prop_assert_eq!(r.e[i], p[i] - o[i]);
            }
        }
    }
}
