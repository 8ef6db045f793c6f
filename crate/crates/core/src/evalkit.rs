//! Off-policy value estimation: inverse-propensity plug-in, the doubly robust
//! estimator, and logistic propensity models.
//!
//! Estimates are reported on the raw reward scale: the dataset's reward
//! offset is removed, and regimes see histories on their own offset.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Action, Dataset, Stage, Trajectory};
use crate::error::{DtrError, Result};
use crate::policy::{regime_decisions, Regime};
use crate::qlearn::QFunction;
use crate::surrogate::logistic;

/// Clipping floor for estimated propensities.
pub const PROPENSITY_CLIP: f64 = 0.01;
pub const NEWTON_MAX_ITER: usize = 100;
pub const NEWTON_GRAD_TOL: f64 = 1e-8;
pub const NEWTON_DECREMENT_TOL: f64 = 1e-12;
/// Linear predictors beyond this magnitude signal (quasi-)separation.
pub const SEPARATION_ETA: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    IpwPlugin,
    MonteCarlo,
    DoublyRobust,
}

impl EstimatorKind {
    pub fn key(self) -> &'static str {
        match self {
            EstimatorKind::IpwPlugin => "ipw",
            EstimatorKind::MonteCarlo => "mc",
            EstimatorKind::DoublyRobust => "dr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub value: f64,
    pub sd: f64,
    pub method: EstimatorKind,
    pub n_used: usize,
}

impl ValueEstimate {
    /// Mean of per-unit terms with standard error `SD/√n` (SD with divisor `n − 1`).
    pub fn from_terms(terms: &[f64], method: EstimatorKind) -> Result<ValueEstimate> {
        let n = terms.len();
        if n == 0 {
            return Err(DtrError::InvalidDataset("no rows to average".into()));
        }
        let mean = terms.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Ok(ValueEstimate { value: mean, sd, method, n_used: n })
    }
}

fn check_floor(d: &Dataset) -> Result<()> {
    for (row, t) in d.trajectories.iter().enumerate() {
        for (field, p) in [("pi1", t.pi1), ("pi2", t.pi2)] {
            if !(p >= d.positivity_floor) {
                return Err(DtrError::PositivityViolation { row, field, value: p, floor: d.positivity_floor });
            }
        }
    }
    Ok(())
}

fn matches(t: &Trajectory, d1: Action, d2: Action) -> (bool, bool) {
    let m1 = t.a1 == d1.value();
    (m1, m1 && t.a2 == d2.value())
}

/// `(Y1+Y2) 1[A1=d1] 1[A2=d2] / (π1 π2)` averaged over rows.
pub fn ipw_value<R: Regime + ?Sized>(d: &Dataset, regime: &R) -> Result<ValueEstimate> {
    check_floor(d)?;
    let terms: Vec<f64> = d
        .trajectories
        .iter()
        .map(|t| {
            let (d1, d2) = regime_decisions(regime, t, d.offset);
            if matches(t, d1, d2).1 {
                (t.y1 + t.y2 - 2.0 * d.offset) / (t.pi1 * t.pi2)
            } else {
                0.0
            }
        })
        .collect();
    ValueEstimate::from_terms(&terms, EstimatorKind::IpwPlugin)
}

/// `Y1 1[A1=d1]/π1 + Y2 1[A1=d1, A2=d2]/(π1 π2)`, the doubly robust estimator
/// with both outcome models set to zero.
pub fn ipw_stagewise_value<R: Regime + ?Sized>(d: &Dataset, regime: &R) -> Result<ValueEstimate> {
    check_floor(d)?;
    let terms: Vec<f64> = d
        .trajectories
        .iter()
        .map(|t| {
            let (d1, d2) = regime_decisions(regime, t, d.offset);
            let (m1, m12) = matches(t, d1, d2);
            let mut v = 0.0;
            if m1 {
                v += (t.y1 - d.offset) / t.pi1;
            }
            if m12 {
                v += (t.y2 - d.offset) / (t.pi1 * t.pi2);
            }
            v
        })
        .collect();
    ValueEstimate::from_terms(&terms, EstimatorKind::IpwPlugin)
}

/// Logistic model for `P(A_t = +1 | H_t)` on `(1, H_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub stage: Stage,
    pub weights: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub clip: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the fit looks separated; probabilities are still clipped.
    pub separation_warning: bool,
}

impl PropensityModel {
    /// `P(A_t = +1 | h)`, clipped to `[clip, 1 − clip]`.
    pub fn prob_plus(&self, h: &[f64]) -> f64 {
        let eta = self.weights[0] + self.weights[1..].iter().zip(h).map(|(w, x)| w * x).sum::<f64>();
        logistic(eta).clamp(self.clip, 1.0 - self.clip)
    }

    pub fn prob_of(&self, h: &[f64], a: f64) -> f64 {
        let p = self.prob_plus(h);
        if a > 0.0 {
            p
        } else {
            1.0 - p
        }
    }
}

/// Maximum-likelihood logistic fit by damped Newton steps.
pub fn fit_propensity(d: &Dataset, stage: Stage) -> Result<PropensityModel> {
    let n = d.len();
    if n == 0 {
        return Err(DtrError::InvalidDataset("empty dataset".into()));
    }
    let rows: Vec<Vec<f64>> = d.trajectories.iter().map(|t| t.history(stage).values).collect();
    let k = rows[0].len() + 1;
    let x = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let target = DVector::from_iterator(
        n,
        d.trajectories.iter().map(|t| {
            let a = if stage == Stage::One { t.a1 } else { t.a2 };
            if a > 0.0 {
                1.0
            } else {
                0.0
            }
        }),
    );
    let loglik = |w: &DVector<f64>| -> f64 {
        let eta = &x * w;
        eta.iter()
            .zip(target.iter())
            .map(|(e, y)| {
                // log σ(e) and log(1 − σ(e)) in stable form
                let log1pexp = if *e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
                y * e - log1pexp
            })
            .sum::<f64>()
            / n as f64
    };
    let mut w = DVector::zeros(k);
    let mut ll = loglik(&w);
    let mut converged = false;
    let mut iterations = 0;
    let mut hessian = DMatrix::identity(k, k);
    for it in 1..=NEWTON_MAX_ITER {
        iterations = it;
        let p = (&x * &w).map(logistic);
        let grad = x.transpose() * (&target - &p) / n as f64;
        let wts = p.map(|v| v * (1.0 - v));
        let mut wx = x.clone();
        for (mut row, w) in wx.row_iter_mut().zip(wts.iter()) {
            row *= *w;
        }
        hessian = x.transpose() * wx / n as f64;
        if grad.norm() < NEWTON_GRAD_TOL {
            converged = true;
            break;
        }
        let reg = &hessian + DMatrix::identity(k, k) * 1e-12;
        let step = match reg.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => grad.clone(),
        };
        // the gradient can stall just above tolerance from rounding; a tiny Newton
        // decrement means the remaining error is far below any standard error
        if grad.dot(&step) < NEWTON_DECREMENT_TOL * (1.0 + ll.abs()) {
            converged = true;
            break;
        }
        let mut t = 1.0;
        loop {
            let cand = &w + &step * t;
            let l = loglik(&cand);
            if l >= ll || t < 1e-10 {
                w = cand;
                ll = l;
                break;
            }
            t *= 0.5;
        }
    }
    let max_eta = (&x * &w).amax();
    let separation_warning = max_eta > SEPARATION_ETA || !converged && ll > -1e-6;
    let std_errors = match (hessian * n as f64).try_inverse() {
        Some(inv) => (0..k).map(|i| inv[(i, i)].max(0.0).sqrt()).collect(),
        None => vec![f64::INFINITY; k],
    };
    Ok(PropensityModel {
        stage,
        weights: w.iter().copied().collect(),
        std_errors,
        clip: PROPENSITY_CLIP,
        iterations,
        converged,
        separation_warning,
    })
}

/// Where the doubly robust estimator takes `π1`, `π2` from.
#[derive(Debug, Clone, Copy)]
pub enum PropensitySource<'a> {
    /// The dataset's stored propensities.
    Known,
    Fitted(&'a PropensityModel, &'a PropensityModel),
}

/// Doubly robust value estimate. `q1`, `q2` score histories on the dataset's
/// reward scale; the estimate is shifted back to the raw scale.
pub fn dr_value<R: Regime + ?Sized>(
    d: &Dataset,
    regime: &R,
    q1: &dyn QFunction,
    q2: &dyn QFunction,
    pm: PropensitySource<'_>,
) -> Result<ValueEstimate> {
    check_floor(d)?;
    let terms: Vec<f64> = d.trajectories.iter().map(|t| dr_term(t, d.offset, regime, q1, q2, pm)).collect();
    let mut est = ValueEstimate::from_terms(&terms, EstimatorKind::DoublyRobust)?;
    est.value -= 2.0 * d.offset;
    Ok(est)
}

/// One row's doubly robust summand, on the dataset's reward scale.
pub fn dr_term<R: Regime + ?Sized>(
    t: &Trajectory,
    data_offset: f64,
    regime: &R,
    q1: &dyn QFunction,
    q2: &dyn QFunction,
    pm: PropensitySource<'_>,
) -> f64 {
    let (d1, d2) = regime_decisions(regime, t, data_offset);
    let h1 = t.history(Stage::One).values;
    let h2 = t.history(Stage::Two).values;
    let (pi1, pi2) = match pm {
        PropensitySource::Known => (t.pi1, t.pi2),
        PropensitySource::Fitted(m1, m2) => (m1.prob_of(&h1, t.a1), m2.prob_of(&h2, t.a2)),
    };
    let q1d = q1.q(&h1, d1.value());
    let q2d = q2.q(&h2, d2.value());
    let (m1, m12) = matches(t, d1, d2);
    let mut v = q1d;
    if m1 {
        v += (t.y1 - (q1d - q2d)) / pi1;
    }
    if m12 {
        v += (t.y2 - q2d) / (pi1 * pi2);
    }
    v
}

/// The zero outcome model.
pub struct ZeroQ;

impl QFunction for ZeroQ {
    fn q(&self, _: &[f64], _: f64) -> f64 {
        0.0
    }
}
