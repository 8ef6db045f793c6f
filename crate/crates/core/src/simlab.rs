//! The five two-stage simulation settings, their optimal rules, and Monte
//! Carlo evaluation of a regime against the generating law.
//!
//! All draws come from `ChaCha8Rng` (rand_chacha 0.9) seeded with the setting's
//! seed; replication sub-seeds come from [`crate::rng::derive_seed`]. Each
//! trajectory consumes its random numbers in a fixed order, and behaviour
//! actions are drawn even when a regime overrides them, so forcing a regime
//! does not shift the stream of covariates and noise.
//!
//! Generated rewards are lifted by the smallest multiple of 0.5 that puts
//! every reward at 0.1 or above; the lift is recorded as the dataset offset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use std::sync::OnceLock;

use crate::consistency::{DiscreteDtr, H1Point, Transition};
use crate::data::{Action, Dataset, History, Trajectory};
use crate::error::{DtrError, Result};
use crate::evalkit::{EstimatorKind, ValueEstimate};
use crate::policy::{regime_history2, Regime};
use crate::qlearn::QFunction;
use crate::surrogate::logistic;

pub const OFFSET_STEP: f64 = 0.5;
pub const OFFSET_MARGIN: f64 = 0.1;
/// Setting 5 draws propensities from a logistic model whose tails can fall
/// below the default floor; its datasets use this floor instead.
pub const SETTING5_POSITIVITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettingSpec {
    pub id: u8,
    pub n: usize,
    pub seed: u64,
}

impl SettingSpec {
    pub fn new(id: u8, n: usize, seed: u64) -> Result<SettingSpec> {
        dims(id)?;
        if n == 0 {
            return Err(DtrError::InvalidConfig("n must be at least 1".into()));
        }
        Ok(SettingSpec { id, n, seed })
    }
}

/// `(p1, p2)` of a setting.
pub fn dims(id: u8) -> Result<(usize, usize)> {
    match id {
        1 => Ok((3, 1)),
        2 => Ok((1, 1)),
        3 => Ok((3, 2)),
        4 => Ok((3, 1)),
        5 => Ok((6, 2)),
        other => Err(DtrError::InvalidSetting(other)),
    }
}

fn std_normal() -> &'static Normal {
    static N: OnceLock<Normal> = OnceLock::new();
    N.get_or_init(|| Normal::new(0.0, 1.0).unwrap())
}

fn cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

fn pdf(x: f64) -> f64 {
    std_normal().pdf(x)
}

/// `E|X|` for `X ~ N(μ, σ²)`.
pub fn folded_normal_mean(mu: f64, sigma: f64) -> f64 {
    let z = mu / sigma;
    sigma * 2.0 * pdf(z) + mu * (1.0 - 2.0 * cdf(-z))
}

fn sign_tie_plus(v: f64) -> Action {
    Action::from_score(v)
}

fn pm1<R: Rng + ?Sized>(rng: &mut R, p_plus: f64) -> f64 {
    if rng.random::<f64>() < p_plus {
        1.0
    } else {
        -1.0
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Behaviour action, possibly overridden; returns `(action, P(observed action))`.
fn choose(behaviour: f64, p_plus: f64, forced: Option<Action>) -> (f64, f64) {
    let a = forced.map_or(behaviour, Action::value);
    (a, if a > 0.0 { p_plus } else { 1.0 - p_plus })
}

// Setting 5 coefficients, padded with zeros to the history blocks
// H10 = (1, X1..X6), H11 = (1, X2..X6), H20 = (Y1, 1, X1..X6, A1, Z21, Z22),
// H21 = (1, X1..X4, A1, Z21, Z22).
const S5_B1: [f64; 7] = [-0.1, 1.0, -1.0, 0.1, 0.0, 0.0, 0.0];
const S5_C1: [f64; 7] = [0.5, 0.2, -1.0, -1.0, 0.1, -0.1, 0.1];
const S5_D1: [f64; 6] = [1.0, -2.0, -2.0, -0.1, 0.1, -1.5];
const S5_B2: [f64; 11] = [0.0, 0.5, 0.1, -1.0, 1.0, -0.1, 0.0, 0.0, 0.0, 0.0, 0.0];
/// The second entry is the unspecified intercept coefficient, set to 1.
const S5_C2: [f64; 11] = [1.0, 1.0, 0.25, -1.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
const S5_D2: [f64; 8] = [1.0, 0.1, -0.1, 0.1, -0.1, 0.25, -1.0, -0.5];
/// Weights of the stage-2 covariates `(Z21, Z22)` in the non-linear term.
const S5_C2_TILDE: [f64; 2] = [0.5, 0.5];
const S5_SIGMA: f64 = 0.9;
const S5_RHO: f64 = 0.1;

fn dotn(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn s5_h10(x: &[f64]) -> Vec<f64> {
    let mut h = vec![1.0];
    h.extend_from_slice(&x[..6]);
    h
}

fn s5_h11(x: &[f64]) -> Vec<f64> {
    let mut h = vec![1.0];
    h.extend_from_slice(&x[1..6]);
    h
}

fn s5_h20(x: &[f64], y1: f64, a1: f64, z: &[f64]) -> Vec<f64> {
    let mut h = vec![y1, 1.0];
    h.extend_from_slice(&x[..6]);
    h.extend_from_slice(&[a1, z[0], z[1]]);
    h
}

fn s5_h21(x: &[f64], a1: f64, z: &[f64]) -> Vec<f64> {
    let mut h = vec![1.0];
    h.extend_from_slice(&x[..4]);
    h.extend_from_slice(&[a1, z[0], z[1]]);
    h
}

fn s5_mu1(x: &[f64], a1: f64) -> f64 {
    dotn(&s5_h10(x), &S5_C1) + a1 * dotn(&s5_h11(x), &S5_D1)
}

fn s5_nonlinear(y1: f64, z: &[f64]) -> f64 {
    let w = dotn(&S5_C2_TILDE, z);
    // the oscillation at Y1 = −1 has no limit; that single point gets 0
    if w == 0.0 || y1 + 1.0 == 0.0 {
        return 0.0;
    }
    w * y1 * (dotn(z, z) / (y1 + 1.0)).sin()
}

/// Draws one raw-scale trajectory; `regime` overrides the behaviour actions.
fn draw<R: Rng + ?Sized>(id: u8, rng: &mut R, regime: Option<&dyn Regime>) -> Trajectory {
    let decide1 = |o1: &[f64]| regime.map(|r| r.decide1(&History { stage: crate::data::Stage::One, values: o1.to_vec() }));
    let decide2 = |o1: &[f64], y1: f64, o2: &[f64], a1: f64| {
        regime.map(|r| r.decide2(&regime_history2(r, o1, y1, o2, Action::from_score(a1))))
    };
    match id {
        1 => {
            let o1: Vec<f64> = (0..3).map(|_| pm1(rng, 0.5)).collect();
            let (x11, x12, x13) = (o1[0], o1[1], o1[2]);
            let b1 = pm1(rng, 0.5);
            let (a1, pi1) = choose(b1, 0.5, decide1(&o1));
            let x21 = indicator(-1.75 * x12 * a1 + normal(rng) > 0.0);
            let y1 = indicator(rng.random::<f64>() < logistic((x13 - 0.5 * x12) * a1));
            let o2 = vec![x21];
            let b2 = pm1(rng, 0.5);
            let (a2, pi2) = choose(b2, 0.5, decide2(&o1, y1, &o2, a1));
            let y2 = indicator(rng.random::<f64>() < logistic(setting1_u(x11, x12, x21, y1) * a2));
            Trajectory { o1, a1, y1, o2, a2, y2, pi1, pi2 }
        }
        2 => {
            let x1 = normal(rng);
            let o1 = vec![x1];
            let b1 = pm1(rng, 0.5);
            let (a1, pi1) = choose(b1, 0.5, decide1(&o1));
            let y1 = a1 * (2.0 * indicator(x1.abs() < 1.0) - 1.0) + normal(rng);
            let x2 = normal(rng);
            let o2 = vec![x2];
            let b2 = pm1(rng, 0.5);
            let (a2, pi2) = choose(b2, 0.5, decide2(&o1, y1, &o2, a1));
            let y2 = a2 * (2.0 * indicator(x2 > x1 * x1) - 1.0) + normal(rng);
            Trajectory { o1, a1, y1, o2, a2, y2, pi1, pi2 }
        }
        3 => {
            let o1: Vec<f64> = (0..3).map(|_| normal(rng)).collect();
            let b1 = pm1(rng, 0.5);
            let (a1, pi1) = choose(b1, 0.5, decide1(&o1));
            let x21 = indicator(1.25 * o1[0] * a1 + normal(rng) > 0.0);
            let x22 = indicator(-1.75 * o1[1] * a1 + normal(rng) > 0.0);
            let y1 = 10.0 + a1 * (1.0 + 1.5 * o1[2]) + normal(rng);
            let o2 = vec![x21, x22];
            let b2 = pm1(rng, 0.5);
            let (a2, pi2) = choose(b2, 0.5, decide2(&o1, y1, &o2, a1));
            let y2 = 10.0 + a2 * setting3_blip2(y1, a1, x21, x22) + normal(rng);
            Trajectory { o1, a1, y1, o2, a2, y2, pi1, pi2 }
        }
        4 => {
            let o1: Vec<f64> = (0..3).map(|_| normal(rng)).collect();
            let b1 = pm1(rng, 0.5);
            let (a1, pi1) = choose(b1, 0.5, decide1(&o1));
            let effect1 = a1 * (1.0 + 1.5 * indicator(o1[2] > 0.0));
            let y1 = 2.0 + effect1 + normal(rng);
            let x21 = normal(rng);
            let o2 = vec![x21];
            let b2 = pm1(rng, 0.5);
            let (a2, pi2) = choose(b2, 0.5, decide2(&o1, y1, &o2, a1));
            let y2 = 2.0 + effect1 + 10.0 * a2 * setting4_sign(o1[1], o1[2]) + x21 + normal(rng);
            Trajectory { o1, a1, y1, o2, a2, y2, pi1, pi2 }
        }
        5 => {
            // Σ = σ²I + ρJ via a shared factor
            let common = normal(rng) * S5_RHO.sqrt();
            let o1: Vec<f64> = (0..6).map(|_| (S5_SIGMA * normal(rng) + common).floor()).collect();
            let p1 = logistic(dotn(&s5_h10(&o1), &S5_B1));
            let b1 = pm1(rng, p1);
            let (a1, pi1) = choose(b1, p1, decide1(&o1));
            let z = vec![
                indicator(1.25 * o1[0] + normal(rng) > 0.0),
                indicator(-1.75 * o1[1] + normal(rng) > 0.0),
            ];
            let y1 = s5_mu1(&o1, a1) + normal(rng);
            let h20 = s5_h20(&o1, y1, a1, &z);
            let p2 = logistic(dotn(&h20, &S5_B2));
            let b2 = pm1(rng, p2);
            let (a2, pi2) = choose(b2, p2, decide2(&o1, y1, &z, a1));
            let mean2 = dotn(&h20, &S5_C2) + a2 * dotn(&s5_h21(&o1, a1, &z), &S5_D2) + s5_nonlinear(y1, &z);
            let y2 = mean2 + normal(rng);
            Trajectory { o1, a1, y1, o2: z, a2, y2, pi1, pi2 }
        }
        _ => unreachable!("setting id checked by caller"),
    }
}

fn setting1_u(x11: f64, x12: f64, x21: f64, y1: f64) -> f64 {
    0.5 * x11 + x12 - 0.2 * x21 + y1
}

fn setting3_blip2(y1: f64, a1: f64, x21: f64, x22: f64) -> f64 {
    -0.5 + 0.5 * y1 + 0.5 * a1 + 0.5 * x21 - 0.5 * x22
}

fn setting4_sign(x12: f64, x13: f64) -> f64 {
    sign_tie_plus(0.01 * x12 * x12 - 0.05 * x13 * x13).value()
}

/// Raw-scale trajectories drawn with behaviour actions.
pub fn generate_raw(spec: &SettingSpec) -> Result<Dataset> {
    let (p1, p2) = dims(spec.id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rows = (0..spec.n).map(|_| draw(spec.id, &mut rng, None)).collect();
    let mut d = Dataset::new(rows, p1, p2);
    if spec.id == 5 {
        d = d.with_positivity_floor(SETTING5_POSITIVITY_FLOOR);
    }
    Ok(d)
}

/// Generates a setting's dataset with its positivity offset applied.
pub fn generate(spec: &SettingSpec) -> Result<Dataset> {
    let raw = generate_raw(spec)?;
    let c = raw.positivity_offset(OFFSET_STEP, OFFSET_MARGIN);
    raw.apply_offset(c)
}

/// Mean raw total reward of `n_eval` fresh trajectories with actions set by `regime`.
pub fn mc_value(id: u8, regime: &dyn Regime, n_eval: usize, seed: u64) -> Result<ValueEstimate> {
    dims(id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<f64> = (0..n_eval)
        .map(|_| {
            let t = draw(id, &mut rng, Some(regime));
            t.y1 + t.y2
        })
        .collect();
    ValueEstimate::from_terms(&terms, EstimatorKind::MonteCarlo)
}

/// Optimal regime of a setting, acting on raw-scale histories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleRule {
    pub id: u8,
}

pub fn oracle_rule(id: u8) -> Result<OracleRule> {
    dims(id)?;
    Ok(OracleRule { id })
}

/// `P(Y1 = 1 | H1, a)` and `P(X21 = 1 | H1, a)` in Setting 1.
fn setting1_stage1_probs(o1: &[f64], a: f64) -> (f64, f64) {
    (logistic((o1[2] - 0.5 * o1[1]) * a), cdf(-1.75 * o1[1] * a))
}

/// `E[Y1 + max_a2 E(Y2 | H2, a2) | H1, a1]` in Setting 1, raw scale.
pub fn setting1_q1_star(o1: &[f64], a: f64) -> f64 {
    let (py, px) = setting1_stage1_probs(o1, a);
    let mut v = py;
    for (y1, p_y) in [(1.0, py), (0.0, 1.0 - py)] {
        for (x21, p_x) in [(1.0, px), (0.0, 1.0 - px)] {
            v += p_y * p_x * logistic(setting1_u(o1[0], o1[1], x21, y1).abs());
        }
    }
    v
}

fn setting3_q1_star(o1: &[f64], a: f64) -> f64 {
    let m = 1.0 + 1.5 * o1[2];
    let p21 = cdf(1.25 * o1[0] * a);
    let p22 = cdf(-1.75 * o1[1] * a);
    let mut v = a * m;
    for (x21, q21) in [(1.0, p21), (0.0, 1.0 - p21)] {
        for (x22, q22) in [(1.0, p22), (0.0, 1.0 - p22)] {
            // μ2 = −.5 + .5 Y1 + .5 a + .5 X21 − .5 X22 with Y1 = 10 + a m + ε1
            let mu = setting3_blip2(10.0 + a * m, a, x21, x22);
            v += q21 * q22 * folded_normal_mean(mu, 0.5);
        }
    }
    v
}

const S5_QUAD_HALF_WIDTH: f64 = 8.0;
const S5_QUAD_POINTS: usize = 1601;

/// `E[Y1 + max_a2 E(Y2 | H2, a2) | H1, a1]` in Setting 5 by summing over
/// `(Z21, Z22)` and trapezoid integration over the stage-1 noise.
pub fn setting5_q1_star(x: &[f64], a: f64) -> f64 {
    let mu1 = s5_mu1(x, a);
    let pz1 = cdf(1.25 * x[0]);
    let pz2 = cdf(-1.75 * x[1]);
    let h = 2.0 * S5_QUAD_HALF_WIDTH / (S5_QUAD_POINTS - 1) as f64;
    let mut v = mu1 + mu1 + S5_C2[1] + S5_C2[2] * x[0] + S5_C2[3] * x[1] + S5_C2[4] * x[2];
    for (z21, q1) in [(1.0, pz1), (0.0, 1.0 - pz1)] {
        for (z22, q2) in [(1.0, pz2), (0.0, 1.0 - pz2)] {
            let z = [z21, z22];
            let p = q1 * q2;
            v += p * dotn(&s5_h21(x, a, &z), &S5_D2).abs();
            if dotn(&S5_C2_TILDE, &z) != 0.0 {
                let integral: f64 = (0..S5_QUAD_POINTS)
                    .map(|i| {
                        let e = -S5_QUAD_HALF_WIDTH + i as f64 * h;
                        let w = if i == 0 || i == S5_QUAD_POINTS - 1 { 0.5 } else { 1.0 };
                        w * pdf(e) * s5_nonlinear(mu1 + e, &z)
                    })
                    .sum::<f64>()
                    * h;
                v += p * integral;
            }
        }
    }
    v
}

fn argmax_q1(q: impl Fn(f64) -> f64) -> Action {
    if q(1.0) >= q(-1.0) {
        Action::Plus
    } else {
        Action::Minus
    }
}

impl Regime for OracleRule {
    fn decide1(&self, h1: &History) -> Action {
        let o1 = &h1.values;
        match self.id {
            1 => argmax_q1(|a| setting1_q1_star(o1, a)),
            2 => sign_tie_plus(2.0 * indicator(o1[0].abs() < 1.0) - 1.0),
            3 => argmax_q1(|a| setting3_q1_star(o1, a)),
            // the stage-1 effect enters both rewards with the same sign and
            // the stage-2 term does not depend on A1
            4 => Action::Plus,
            5 => argmax_q1(|a| setting5_q1_star(o1, a)),
            _ => unreachable!(),
        }
    }

    fn decide2(&self, h2: &History) -> Action {
        let h = &h2.values;
        match self.id {
            // (X11, X12, X13, Y1, X21, A1)
            1 => sign_tie_plus(setting1_u(h[0], h[1], h[4], h[3])),
            // (X1, Y1, X2, A1)
            2 => sign_tie_plus(2.0 * indicator(h[2] > h[0] * h[0]) - 1.0),
            // (X11, X12, X13, Y1, X21, X22, A1)
            3 => sign_tie_plus(setting3_blip2(h[3], h[6], h[4], h[5])),
            // (X11, X12, X13, Y1, X21, A1)
            4 => sign_tie_plus(setting4_sign(h[1], h[2])),
            // (X1..X6, Y1, Z21, Z22, A1)
            5 => sign_tie_plus(dotn(&s5_h21(&h[..6], h[9], &h[7..9]), &S5_D2)),
            _ => unreachable!(),
        }
    }
}

/// Stage-2 oracle outcome model of Setting 1 on data lifted by `offset`.
#[derive(Debug, Clone, Copy)]
pub struct Setting1Q2 {
    pub offset: f64,
}

impl QFunction for Setting1Q2 {
    fn q(&self, h: &[f64], a: f64) -> f64 {
        self.offset + logistic(setting1_u(h[0], h[1], h[4], h[3] - self.offset) * a)
    }
}

/// Stage-1 oracle outcome model of Setting 1 under the optimal stage-2 rule.
#[derive(Debug, Clone, Copy)]
pub struct Setting1Q1 {
    pub offset: f64,
}

impl QFunction for Setting1Q1 {
    fn q(&self, h: &[f64], a: f64) -> f64 {
        2.0 * self.offset + setting1_q1_star(h, a)
    }
}

/// Exact law of Setting 1 with rewards lifted by `offset > 0`.
pub fn setting1_law(offset: f64) -> DiscreteDtr {
    let mut h1 = Vec::with_capacity(8);
    for code in 0..8 {
        let o1: Vec<f64> = (0..3).map(|j| if code >> j & 1 == 1 { 1.0 } else { -1.0 }).collect();
        let branches = [1.0, -1.0].map(|a| {
            let (py, px) = setting1_stage1_probs(&o1, a);
            let mut out = Vec::with_capacity(4);
            for (y1, p_y) in [(1.0, py), (0.0, 1.0 - py)] {
                for (x21, p_x) in [(1.0, px), (0.0, 1.0 - px)] {
                    let u = setting1_u(o1[0], o1[1], x21, y1);
                    let law = |s: f64| vec![(1.0 + offset, logistic(u * s)), (offset, 1.0 - logistic(u * s))];
                    out.push(Transition { y1: y1 + offset, o2: vec![x21], prob: p_y * p_x, pi2: 0.5, y2: [law(1.0), law(-1.0)] });
                }
            }
            out
        });
        h1.push(H1Point { o1, prob: 1.0 / 8.0, pi1: 0.5, branches });
    }
    DiscreteDtr { h1 }
}
