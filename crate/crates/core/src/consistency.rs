//! Fisher-consistency laboratory.
//!
//! Under a deterministic-transition law the surrogate value reduces to the
//! four-term functional
//! `Ψ(t;τ) = τ1ψ(x,y) + τ2ψ(x,−y) + τ3ψ(−x,z) + τ4ψ(−x,−z)`,
//! whose maximiser's signs are the surrogate-optimal decisions. This module
//! evaluates and maximises `Ψ`, derives the true optimal decisions from `τ`,
//! and computes exact values of finite two-stage laws by enumeration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Action;
use crate::error::{DtrError, Result};
use crate::surrogate::SurrogateSpec;

/// Ties between `τ` entries closer than this go to `+1`.
pub const TAU_TIE_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_BOX: f64 = 50.0;
pub const DEFAULT_GRID_STEP: f64 = 0.5;
/// Refinement stops once the pattern-search step falls below this.
pub const REFINE_TOLERANCE: f64 = 1e-6;

/// `(T̃(1,1), T̃(1,−1), T̃(−1,1), T̃(−1,−1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauVector(pub [f64; 4]);

impl TauVector {
    pub fn new(tau: [f64; 4]) -> Result<TauVector> {
        if tau.iter().all(|t| t.is_finite() && *t > 0.0) {
            Ok(TauVector(tau))
        } else {
            Err(DtrError::InvalidConfig(format!("tau entries must be positive and finite, got {tau:?}")))
        }
    }

    /// `T̃(a1, a2)`.
    pub fn get(&self, a1: Action, a2: Action) -> f64 {
        let i = match (a1, a2) {
            (Action::Plus, Action::Plus) => 0,
            (Action::Plus, Action::Minus) => 1,
            (Action::Minus, Action::Plus) => 2,
            (Action::Minus, Action::Minus) => 3,
        };
        self.0[i]
    }
}

impl std::str::FromStr for TauVector {
    type Err = DtrError;

    fn from_str(s: &str) -> Result<TauVector> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(DtrError::InvalidConfig(format!("tau needs four comma-separated values, got {s:?}")));
        }
        let mut tau = [0.0; 4];
        for (t, p) in tau.iter_mut().zip(parts) {
            *t = p.parse().map_err(|_| DtrError::InvalidConfig(format!("bad tau entry {p:?}")))?;
        }
        TauVector::new(tau)
    }
}

pub fn psi_transform(s: &SurrogateSpec, t: [f64; 3], tau: &TauVector) -> f64 {
    let [x, y, z] = t;
    let [t1, t2, t3, t4] = tau.0;
    t1 * s.psi(x, y) + t2 * s.psi(x, -y) + t3 * s.psi(-x, z) + t4 * s.psi(-x, -z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiMaximizer {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub value: f64,
}

fn grid(b: f64, step: f64) -> Vec<f64> {
    let n = (2.0 * b / step).round() as i64;
    (0..=n).map(|i| (-b + i as f64 * step).clamp(-b, b)).collect()
}

/// Maximises a one-dimensional function on `[−b, b]`: best grid point, then
/// pattern search with step halving. Exact for concave and monotone inputs.
fn maximize_1d(f: &dyn Fn(f64) -> f64, b: f64, pts: &[f64], step: f64) -> (f64, f64) {
    let (mut best, mut val) = (pts[0], f(pts[0]));
    for &p in &pts[1..] {
        let v = f(p);
        if v > val {
            best = p;
            val = v;
        }
    }
    let mut h = step;
    while h >= REFINE_TOLERANCE {
        let mut moved = false;
        for cand in [(best + h).min(b), (best - h).max(-b)] {
            let v = f(cand);
            if v > val {
                best = cand;
                val = v;
                moved = true;
            }
        }
        if !moved {
            h /= 2.0;
        }
    }
    (best, val)
}

/// Grid search over `[−b, b]³` followed by step-halving refinement down to
/// `1e−6`. For fixed `x` the `y` and `z` terms separate, so the search profiles
/// them out exactly and refines `x` on the profiled objective.
pub fn maximize_psi_transform(s: &SurrogateSpec, tau: &TauVector, b: f64, grid_step: f64) -> Result<PsiMaximizer> {
    if !(b > 0.0) || !(grid_step > 0.0) {
        return Err(DtrError::Precondition("box half-width and grid step must be positive".into()));
    }
    let pts = grid(b, grid_step);
    let [t1, t2, t3, t4] = tau.0;
    let inner = |x: f64| -> (f64, f64, f64) {
        let g = |y: f64| t1 * s.psi(x, y) + t2 * s.psi(x, -y);
        let h = |z: f64| t3 * s.psi(-x, z) + t4 * s.psi(-x, -z);
        let (y, gv) = maximize_1d(&g, b, &pts, grid_step);
        let (z, hv) = maximize_1d(&h, b, &pts, grid_step);
        (y, z, gv + hv)
    };
    let profiled = |x: f64| inner(x).2;
    let (x, _) = maximize_1d(&profiled, b, &pts, grid_step);
    let (y, z, value) = inner(x);
    Ok(PsiMaximizer { x, y, z, value })
}

/// +1, −1, or 0 within `tol` of zero.
pub fn sign_with_tolerance(v: f64, tol: f64) -> i8 {
    if v > tol {
        1
    } else if v < -tol {
        -1
    } else {
        0
    }
}

/// True decisions implied by `τ`: `(d1*, d2*(·,+1), d2*(·,−1))`, ties to `+1`.
pub fn optimal_rule_from_tau(tau: &TauVector) -> (Action, Action, Action) {
    let [t1, t2, t3, t4] = tau.0;
    let prefer = |plus: f64, minus: f64| if plus + TAU_TIE_TOLERANCE >= minus { Action::Plus } else { Action::Minus };
    (prefer(t1.max(t2), t3.max(t4)), prefer(t1, t2), prefer(t3, t4))
}

/// Whether the hinge surrogate's maximiser has `x* ≤ 0` (up to `1e−6`). Requires
/// `τ1` to be the unique maximum and `τ1 < τ2 + τ3 + τ4`, where `d1* = +1`.
pub fn hinge_sign_check(tau: &TauVector) -> Result<bool> {
    let [t1, t2, t3, t4] = tau.0;
    if !(t1 > t2.max(t3).max(t4) + TAU_TIE_TOLERANCE) {
        return Err(DtrError::Precondition(format!("tau1 must be the unique maximum, got {:?}", tau.0)));
    }
    if !(t1 < t2 + t3 + t4) {
        return Err(DtrError::Precondition(format!("need tau1 < tau2 + tau3 + tau4, got {:?}", tau.0)));
    }
    let s: SurrogateSpec = "hinge".parse()?;
    let m = maximize_psi_transform(&s, tau, DEFAULT_BOX, DEFAULT_GRID_STEP)?;
    Ok(m.x <= REFINE_TOLERANCE)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub surrogate: String,
    pub tau: [f64; 4],
    pub maximizer: PsiMaximizer,
    pub sign_x: i8,
    pub sign_y: i8,
    pub sign_z: i8,
    pub d1_star: i8,
    pub d2_star_plus: i8,
    pub d2_star_minus: i8,
    /// `"consistent"` when every maximiser sign matches the optimal decision.
    pub verdict: String,
}

pub fn consistency_report(s: &SurrogateSpec, tau: &TauVector) -> Result<ConsistencyReport> {
    let m = maximize_psi_transform(s, tau, DEFAULT_BOX, DEFAULT_GRID_STEP)?;
    let (d1, d2p, d2m) = optimal_rule_from_tau(tau);
    let code = |a: Action| a.value() as i8;
    let (sx, sy, sz) = (
        sign_with_tolerance(m.x, REFINE_TOLERANCE),
        sign_with_tolerance(m.y, REFINE_TOLERANCE),
        sign_with_tolerance(m.z, REFINE_TOLERANCE),
    );
    let ok = sx == code(d1) && sy == code(d2p) && sz == code(d2m);
    Ok(ConsistencyReport {
        surrogate: s.kind.key().to_string(),
        tau: tau.0,
        maximizer: m,
        sign_x: sx,
        sign_y: sy,
        sign_z: sz,
        d1_star: code(d1),
        d2_star_plus: code(d2p),
        d2_star_minus: code(d2m),
        verdict: if ok { "consistent" } else { "inconsistent" }.into(),
    })
}

/// Stage-2 outcome distribution under one action: `(y2, probability)` pairs.
pub type OutcomeLaw = Vec<(f64, f64)>;

/// One `(Y1, O2)` transition reachable from an `(H1, A1)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub y1: f64,
    pub o2: Vec<f64>,
    pub prob: f64,
    /// `P(A2 = +1 | H2)`.
    pub pi2: f64,
    /// Indexed by `A2`: `[+1, −1]`.
    pub y2: [OutcomeLaw; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H1Point {
    pub o1: Vec<f64>,
    pub prob: f64,
    /// `P(A1 = +1 | H1)`.
    pub pi1: f64,
    /// Indexed by `A1`: `[+1, −1]`.
    pub branches: [Vec<Transition>; 2],
}

/// A finite two-stage law given as a tree `H1 → A1 → (Y1, O2) → A2 → Y2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDtr {
    pub h1: Vec<H1Point>,
}

pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

fn action_index(a: Action) -> usize {
    match a {
        Action::Plus => 0,
        Action::Minus => 1,
    }
}

/// Stage-2 history in the `(O1, Y1, O2, A1)` layout.
pub fn discrete_h2(o1: &[f64], tr: &Transition, a1: Action) -> Vec<f64> {
    crate::data::Trajectory::history2_with(o1, tr.y1, &tr.o2, a1.value()).values
}

fn mean(law: &OutcomeLaw) -> f64 {
    law.iter().map(|(y, p)| y * p).sum()
}

impl DiscreteDtr {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DtrError::InvalidDataset(m));
        let close = |s: f64| (s - 1.0).abs() <= PROBABILITY_TOLERANCE;
        if !close(self.h1.iter().map(|h| h.prob).sum()) {
            return bad("H1 probabilities do not sum to 1".into());
        }
        for (i, h) in self.h1.iter().enumerate() {
            if !(h.pi1 > 0.0 && h.pi1 < 1.0) {
                return bad(format!("pi1 out of (0,1) at H1 point {i}"));
            }
            for branch in &h.branches {
                if !close(branch.iter().map(|t| t.prob).sum()) {
                    return bad(format!("transition probabilities do not sum to 1 at H1 point {i}"));
                }
                for t in branch {
                    if !(t.y1 > 0.0) || !(t.pi2 > 0.0 && t.pi2 < 1.0) {
                        return bad(format!("non-positive Y1 or invalid pi2 below H1 point {i}"));
                    }
                    for law in &t.y2 {
                        if !close(law.iter().map(|(_, p)| p).sum()) || law.iter().any(|(y, _)| !(*y > 0.0)) {
                            return bad(format!("invalid Y2 law below H1 point {i}"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Optimal decisions by backward induction, ties to `+1`.
    pub fn optimal_d2(&self, tr: &Transition) -> Action {
        if mean(&tr.y2[0]) >= mean(&tr.y2[1]) {
            Action::Plus
        } else {
            Action::Minus
        }
    }

    fn stage1_q(&self, h: &H1Point, a1: Action, d2: &dyn Fn(&[f64], &Transition, Action) -> Action) -> f64 {
        h.branches[action_index(a1)]
            .iter()
            .map(|t| t.prob * (t.y1 + mean(&t.y2[action_index(d2(&h.o1, t, a1))])))
            .sum()
    }

    pub fn optimal_d1(&self, h: &H1Point) -> Action {
        let d2 = |_: &[f64], t: &Transition, _: Action| self.optimal_d2(t);
        if self.stage1_q(h, Action::Plus, &d2) >= self.stage1_q(h, Action::Minus, &d2) {
            Action::Plus
        } else {
            Action::Minus
        }
    }

    /// `V(d1, d2)` where the rules see `O1` and the stage-2 history.
    pub fn value_of(&self, d1: &dyn Fn(&[f64]) -> Action, d2: &dyn Fn(&[f64]) -> Action) -> f64 {
        let d2t = |o1: &[f64], t: &Transition, a1: Action| d2(&discrete_h2(o1, t, a1));
        self.h1.iter().map(|h| h.prob * self.stage1_q(h, d1(&h.o1), &d2t)).sum()
    }

    pub fn optimal_value(&self) -> f64 {
        let d2 = |_: &[f64], t: &Transition, _: Action| self.optimal_d2(t);
        self.h1.iter().map(|h| h.prob * self.stage1_q(h, self.optimal_d1(h), &d2)).sum()
    }

    /// `E[(Y1+Y2) w(A1, H2, A2) / (π1 π2)]`; the inverse weights cancel the
    /// action probabilities, leaving a sum over both actions at each stage.
    fn weighted_sum(&self, w: &dyn Fn(&H1Point, Action, &Transition, Action) -> f64) -> f64 {
        let mut total = 0.0;
        for h in &self.h1 {
            for a1 in Action::BOTH {
                for t in &h.branches[action_index(a1)] {
                    for a2 in Action::BOTH {
                        let k = w(h, a1, t, a2);
                        for (y2, p) in &t.y2[action_index(a2)] {
                            total += h.prob * t.prob * p * (t.y1 + y2) * k;
                        }
                    }
                }
            }
        }
        total
    }

    /// `V_ψ(f1, f2)` for score functions on `O1` and the stage-2 history.
    pub fn surrogate_value(&self, s: &SurrogateSpec, f1: &dyn Fn(&[f64]) -> f64, f2: &dyn Fn(&[f64]) -> f64) -> f64 {
        self.weighted_sum(&|h, a1, t, a2| s.psi(a1.value() * f1(&h.o1), a2.value() * f2(&discrete_h2(&h.o1, t, a1))))
    }

    /// `V_ψ*` by the calibrated substitution `φ(A f̃) = C_φ 1[A = d*]`.
    pub fn optimal_surrogate_value(&self, s: &SurrogateSpec) -> f64 {
        let c = s.c_phi;
        self.weighted_sum(&|h, a1, t, a2| {
            let on1 = a1 == self.optimal_d1(h);
            let on2 = a2 == self.optimal_d2(t);
            if on1 && on2 {
                c * c
            } else {
                0.0
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactValues {
    pub v: f64,
    pub v_star: f64,
    pub v_psi: f64,
    pub v_psi_star: f64,
}

impl ExactValues {
    pub fn regret(&self) -> f64 {
        self.v_star - self.v
    }

    pub fn surrogate_regret(&self) -> f64 {
        self.v_psi_star - self.v_psi
    }
}

/// Exact `{V, V*, V_ψ, V_ψ*}` for score functions; decisions are their signs.
pub fn exact_values_discrete(
    law: &DiscreteDtr,
    f1: &dyn Fn(&[f64]) -> f64,
    f2: &dyn Fn(&[f64]) -> f64,
    s: &SurrogateSpec,
) -> Result<ExactValues> {
    law.validate()?;
    if !s.is_sigmoid() {
        return Err(DtrError::UnsupportedSurrogate(s.kind.key()));
    }
    let d1 = |h: &[f64]| Action::from_score(f1(h));
    let d2 = |h: &[f64]| Action::from_score(f2(h));
    Ok(ExactValues {
        v: law.value_of(&d1, &d2),
        v_star: law.optimal_value(),
        v_psi: law.surrogate_value(s, f1, f2),
        v_psi_star: law.optimal_surrogate_value(s),
    })
}

/// Random law with scalar `O1`, `O2`: up to 4 `H1` points, 2 transitions per
/// `(H1, A1)` and 2 outcomes per `(H2, A2)`, so at most 16 support points per
/// action path.
pub fn random_law<R: Rng + ?Sized>(rng: &mut R) -> DiscreteDtr {
    let simplex = |rng: &mut R, k: usize| -> Vec<f64> {
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    };
    let n_h1 = rng.random_range(1..=4);
    let p_h1 = simplex(rng, n_h1);
    let h1 = p_h1
        .into_iter()
        .enumerate()
        .map(|(i, prob)| {
            let branches = [(); 2].map(|_| {
                let k = rng.random_range(1..=2);
                let p = simplex(rng, k);
                p.into_iter()
                    .map(|prob| Transition {
                        y1: rng.random_range(0.1..3.0),
                        o2: vec![rng.random_range(-2.0..2.0)],
                        prob,
                        pi2: rng.random_range(0.1..0.9),
                        y2: [(); 2].map(|_| {
                            let m = rng.random_range(1..=2);
                            let q = simplex(rng, m);
                            q.into_iter().map(|p| (rng.random_range(0.1..5.0), p)).collect()
                        }),
                    })
                    .collect()
            });
            H1Point { o1: vec![i as f64 - 1.5 + rng.random_range(-0.4..0.4)], prob, pi1: rng.random_range(0.1..0.9), branches }
        })
        .collect();
    DiscreteDtr { h1 }
}

/// Linear score `w0 + wᵀh` with weights drawn on a random log scale.
pub fn random_linear_score<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    let scale = 10f64.powf(rng.random_range(-2.0..2.0));
    (0..=dim).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
}

pub fn linear_score(w: &[f64], h: &[f64]) -> f64 {
    w[0] + w[1..].iter().zip(h).map(|(a, b)| a * b).sum::<f64>()
}
