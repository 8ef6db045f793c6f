//! Surrogates for the bivariate zero-one indicator `1[x > 0] 1[y > 0]`.
//!
//! The four sigmoid kinds are strictly increasing, positive, satisfy
//! `φ(x) + φ(-x) = C_φ` with `C_φ = 2`, and are combined as the product
//! `ψ(x, y) = φ(x) φ(y)`. The hinge and concave comparators are genuinely
//! bivariate and are kept for evaluation and counterexample work.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DtrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SurrogateKind {
    RationalSigmoid,
    ArctanSigmoid,
    AlgebraicSigmoid,
    LogisticSigmoid,
    HingeBivariate,
    ExponentialConcave,
    LogisticConcave,
}

impl SurrogateKind {
    pub const SIGMOIDS: [SurrogateKind; 4] = [
        SurrogateKind::RationalSigmoid,
        SurrogateKind::ArctanSigmoid,
        SurrogateKind::AlgebraicSigmoid,
        SurrogateKind::LogisticSigmoid,
    ];

    pub const ALL: [SurrogateKind; 7] = [
        SurrogateKind::RationalSigmoid,
        SurrogateKind::ArctanSigmoid,
        SurrogateKind::AlgebraicSigmoid,
        SurrogateKind::LogisticSigmoid,
        SurrogateKind::HingeBivariate,
        SurrogateKind::ExponentialConcave,
        SurrogateKind::LogisticConcave,
    ];

    pub fn is_sigmoid(self) -> bool {
        matches!(
            self,
            SurrogateKind::RationalSigmoid
                | SurrogateKind::ArctanSigmoid
                | SurrogateKind::AlgebraicSigmoid
                | SurrogateKind::LogisticSigmoid
        )
    }

    pub fn key(self) -> &'static str {
        match self {
            SurrogateKind::RationalSigmoid => "rational",
            SurrogateKind::ArctanSigmoid => "arctan",
            SurrogateKind::AlgebraicSigmoid => "algebraic",
            SurrogateKind::LogisticSigmoid => "logistic",
            SurrogateKind::HingeBivariate => "hinge",
            SurrogateKind::ExponentialConcave => "exp-concave",
            SurrogateKind::LogisticConcave => "logistic-concave",
        }
    }
}

impl fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Derivative envelope family: type A decays polynomially, type B exponentially.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TypeClass {
    A,
    B,
    NotConditionTwo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    pub c_phi: f64,
    pub type_class: TypeClass,
    pub b_phi: f64,
    pub kappa: f64,
    /// Arguments are multiplied by this before evaluation; 1 except for the tanh alias.
    pub input_scale: f64,
}

impl SurrogateSpec {
    pub fn new(kind: SurrogateKind) -> SurrogateSpec {
        let (type_class, b_phi, kappa) = match kind {
            SurrogateKind::RationalSigmoid => (TypeClass::A, 1.0, 2.0),
            SurrogateKind::ArctanSigmoid => (TypeClass::A, 2.0, 2.0),
            SurrogateKind::AlgebraicSigmoid => (TypeClass::A, 2f64.powf(1.5), 3.0),
            SurrogateKind::LogisticSigmoid => (TypeClass::B, 2.0, 1.0),
            _ => (TypeClass::NotConditionTwo, f64::NAN, f64::NAN),
        };
        let c_phi = if kind.is_sigmoid() { 2.0 } else { f64::NAN };
        SurrogateSpec { kind, c_phi, type_class, b_phi, kappa, input_scale: 1.0 }
    }

    /// `1 + tanh(x)`, which is the logistic kind evaluated at `2x`.
    pub fn tanh() -> SurrogateSpec {
        let mut s = SurrogateSpec::new(SurrogateKind::LogisticSigmoid);
        s.input_scale = 2.0;
        s.b_phi = 4.0;
        s.kappa = 2.0;
        s
    }

    pub fn is_sigmoid(&self) -> bool {
        self.kind.is_sigmoid()
    }

    fn require_sigmoid(&self) -> Result<()> {
        if self.is_sigmoid() {
            Ok(())
        } else {
            Err(DtrError::UnsupportedSurrogate(self.kind.key()))
        }
    }

    pub fn phi(&self, x: f64) -> Result<f64> {
        self.require_sigmoid()?;
        Ok(sigmoid_phi(self.kind, self.input_scale * x))
    }

    pub fn phi_grad(&self, x: f64) -> Result<f64> {
        self.require_sigmoid()?;
        Ok(self.input_scale * sigmoid_phi_grad(self.kind, self.input_scale * x))
    }

    pub fn psi(&self, x: f64, y: f64) -> f64 {
        let s = self.input_scale;
        match self.kind {
            k if k.is_sigmoid() => sigmoid_phi(k, s * x) * sigmoid_phi(k, s * y),
            SurrogateKind::HingeBivariate => (x - 1.0).min(y - 1.0).min(0.0),
            SurrogateKind::ExponentialConcave => -(-x - y).exp(),
            SurrogateKind::LogisticConcave => -((-x).exp() + (-y).exp()).ln_1p(),
            _ => unreachable!(),
        }
    }

    /// `(∂ψ/∂x, ∂ψ/∂y)` for the product surrogates.
    pub fn psi_grad(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        self.require_sigmoid()?;
        Ok(self.psi_grad_unchecked(x, y))
    }

    /// Gradient, or a supergradient where ψ is not differentiable, for every kind.
    /// The strict [`SurrogateSpec::psi_grad`] is the one to use for consistent training.
    pub fn psi_supergradient(&self, x: f64, y: f64) -> (f64, f64) {
        match self.kind {
            k if k.is_sigmoid() => self.psi_grad_unchecked(x, y),
            SurrogateKind::HingeBivariate => {
                let (a, b) = (x - 1.0, y - 1.0);
                if a <= b && a < 0.0 {
                    (1.0, 0.0)
                } else if b < a && b < 0.0 {
                    (0.0, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            SurrogateKind::ExponentialConcave => {
                let e = (-x - y).exp();
                (e, e)
            }
            SurrogateKind::LogisticConcave => {
                let (ex, ey) = ((-x).exp(), (-y).exp());
                let d = 1.0 + ex + ey;
                (ex / d, ey / d)
            }
            _ => unreachable!(),
        }
    }

    fn psi_grad_unchecked(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.input_scale;
        let k = self.kind;
        let (px, py) = (sigmoid_phi(k, s * x), sigmoid_phi(k, s * y));
        let (gx, gy) = (sigmoid_phi_grad(k, s * x), sigmoid_phi_grad(k, s * y));
        (s * gx * py, s * px * gy)
    }

    /// Upper bound of ψ for the product surrogates, `C_φ²`.
    pub fn psi_sup(&self) -> f64 {
        self.c_phi * self.c_phi
    }
}

impl FromStr for SurrogateSpec {
    type Err = DtrError;

    fn from_str(s: &str) -> Result<SurrogateSpec> {
        if s == "tanh" {
            return Ok(SurrogateSpec::tanh());
        }
        SurrogateKind::ALL
            .iter()
            .find(|k| k.key() == s)
            .map(|&k| SurrogateSpec::new(k))
            .ok_or_else(|| DtrError::UnknownSurrogate(s.to_string()))
    }
}

fn sigmoid_phi(kind: SurrogateKind, x: f64) -> f64 {
    match kind {
        SurrogateKind::RationalSigmoid => 1.0 + x / (1.0 + x.abs()),
        SurrogateKind::ArctanSigmoid => 1.0 + (2.0 / PI) * (PI * x / 2.0).atan(),
        SurrogateKind::AlgebraicSigmoid => 1.0 + x / (1.0 + x * x).sqrt(),
        SurrogateKind::LogisticSigmoid => 2.0 * logistic(x),
        _ => unreachable!("not a sigmoid kind"),
    }
}

fn sigmoid_phi_grad(kind: SurrogateKind, x: f64) -> f64 {
    match kind {
        SurrogateKind::RationalSigmoid => {
            let d = 1.0 + x.abs();
            1.0 / (d * d)
        }
        SurrogateKind::ArctanSigmoid => 1.0 / (1.0 + PI * PI * x * x / 4.0),
        SurrogateKind::AlgebraicSigmoid => (1.0 + x * x).powf(-1.5),
        SurrogateKind::LogisticSigmoid => {
            let s = logistic(x);
            2.0 * s * (1.0 - s)
        }
        _ => unreachable!("not a sigmoid kind"),
    }
}

/// Numerically stable `1 / (1 + e^{-x})`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTwoReport {
    pub points: usize,
    pub non_positive: Vec<f64>,
    pub symmetry_failures: Vec<(f64, f64)>,
    pub monotonicity_failures: Vec<(f64, f64)>,
    pub tail_failures: Vec<(f64, f64)>,
}

impl ConditionTwoReport {
    pub fn passed(&self) -> bool {
        self.non_positive.is_empty()
            && self.symmetry_failures.is_empty()
            && self.monotonicity_failures.is_empty()
            && self.tail_failures.is_empty()
    }
}

pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
const TAIL_POINT: f64 = 1e3;
const TAIL_TOLERANCE: f64 = 0.05;

/// Grid evidence (not proof) that φ satisfies the sigmoid-type condition.
/// `grid` must be sorted ascending for the monotonicity check.
pub fn check_condition_two(s: &SurrogateSpec, grid: &[f64]) -> Result<ConditionTwoReport> {
    s.require_sigmoid()?;
    let phi = |x: f64| sigmoid_phi(s.kind, s.input_scale * x);
    let mut rep = ConditionTwoReport {
        points: grid.len(),
        non_positive: vec![],
        symmetry_failures: vec![],
        monotonicity_failures: vec![],
        tail_failures: vec![],
    };
    for &x in grid {
        let v = phi(x);
        if !(v > 0.0) {
            rep.non_positive.push(x);
        }
        let dev = (v + phi(-x) - s.c_phi).abs();
        if dev > SYMMETRY_TOLERANCE {
            rep.symmetry_failures.push((x, dev));
        }
    }
    for w in grid.windows(2) {
        if !(phi(w[1]) > phi(w[0])) {
            rep.monotonicity_failures.push((w[0], w[1]));
        }
    }
    for (x, limit) in [(TAIL_POINT, s.c_phi), (-TAIL_POINT, 0.0)] {
        let v = phi(x);
        if (v - limit).abs() > TAIL_TOLERANCE {
            rep.tail_failures.push((x, v));
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeBoundReport {
    pub type_class: TypeClass,
    pub points: usize,
    /// Points where `|φ'(x)|` exceeds the envelope by more than the slack.
    pub violations: Vec<(f64, f64, f64)>,
    /// Points where the envelope is met with (numerical) equality.
    pub tangencies: usize,
}

impl TypeBoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const ENVELOPE_SLACK: f64 = 1e-12;

/// The derivative envelope `B_φ (1+|x|)^{-κ}` (type A) or `B_φ e^{-κ|x|}` (type B).
pub fn envelope(s: &SurrogateSpec, x: f64) -> f64 {
    match s.type_class {
        TypeClass::A => s.b_phi * (1.0 + x.abs()).powf(-s.kappa),
        TypeClass::B => s.b_phi * (-s.kappa * x.abs()).exp(),
        TypeClass::NotConditionTwo => f64::NAN,
    }
}

/// Checks `|φ'(x)| ≤ envelope(x) + slack` over a grid; zero is skipped.
pub fn check_type_bounds(s: &SurrogateSpec, grid: &[f64]) -> Result<TypeBoundReport> {
    s.require_sigmoid()?;
    let mut rep = TypeBoundReport { type_class: s.type_class, points: 0, violations: vec![], tangencies: 0 };
    for &x in grid.iter().filter(|&&x| x != 0.0) {
        rep.points += 1;
        let d = s.phi_grad(x)?.abs();
        let b = envelope(s, x);
        if d > b + ENVELOPE_SLACK {
            rep.violations.push((x, d, b));
        } else if d >= b - ENVELOPE_SLACK * b.max(1.0) {
            rep.tangencies += 1;
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(k: SurrogateKind) -> SurrogateSpec {
        SurrogateSpec::new(k)
    }

    fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(|i| lo + i as f64 * step).collect()
    }

    #[test]
    fn phi_examples() {
        assert_eq!(spec(SurrogateKind::LogisticSigmoid).phi(0.0).unwrap(), 1.0);
        assert_eq!(spec(SurrogateKind::RationalSigmoid).phi(1.0).unwrap(), 1.5);
        let v = spec(SurrogateKind::ArctanSigmoid).phi(50.0).unwrap();
        assert!((v - 2.0).abs() < 0.03 && v < 2.0);
    }

    #[test]
    fn phi_rejects_comparators() {
        for k in [SurrogateKind::HingeBivariate, SurrogateKind::ExponentialConcave, SurrogateKind::LogisticConcave] {
            assert!(matches!(spec(k).phi(0.0), Err(DtrError::UnsupportedSurrogate(_))));
            assert!(spec(k).psi_grad(0.0, 0.0).is_err());
        }
    }

    #[test]
    fn phi_grad_at_zero() {
        assert_eq!(spec(SurrogateKind::RationalSigmoid).phi_grad(0.0).unwrap(), 1.0);
        assert_eq!(spec(SurrogateKind::LogisticSigmoid).phi_grad(0.0).unwrap(), 0.5);
    }

    #[test]
    fn phi_grad_matches_central_differences() {
        let h = 1e-5;
        for k in SurrogateKind::SIGMOIDS {
            let s = spec(k);
            for x in grid(-5.0, 5.0, 0.05) {
                // the rational kind has a kink in φ'' at 0, which the stencil straddles
                if x.abs() < 2.0 * h {
                    continue;
                }
                let fd = (s.phi(x + h).unwrap() - s.phi(x - h).unwrap()) / (2.0 * h);
                let g = s.phi_grad(x).unwrap();
                assert!(g > 0.0);
                assert!(((fd - g) / g).abs() < 1e-6, "{k} at {x}: fd {fd} vs {g}");
            }
        }
    }

    #[test]
    fn psi_examples() {
        assert_eq!(spec(SurrogateKind::LogisticSigmoid).psi(0.0, 0.0), 1.0);
        assert_eq!(spec(SurrogateKind::HingeBivariate).psi(5.0, 5.0), 0.0);
        assert_eq!(spec(SurrogateKind::ExponentialConcave).psi(0.0, 0.0), -1.0);
        assert_relative_eq!(spec(SurrogateKind::LogisticConcave).psi(0.0, 0.0), -(3f64.ln()));
    }

    #[test]
    fn psi_grad_examples() {
        let s = spec(SurrogateKind::LogisticSigmoid);
        assert_eq!(s.psi_grad(0.0, 0.0).unwrap(), (0.5, 0.5));
        for k in SurrogateKind::SIGMOIDS {
            let (gx, gy) = spec(k).psi_grad(0.7, 0.7).unwrap();
            assert_eq!(gx, gy);
        }
    }

    #[test]
    fn psi_grad_matches_central_differences() {
        let h = 1e-5;
        for k in SurrogateKind::SIGMOIDS {
            let s = spec(k);
            let g = grid(-5.0, 5.0, 0.25);
            for &x in &g {
                for &y in &g {
                    if x.abs() < 2.0 * h || y.abs() < 2.0 * h {
                        continue;
                    }
                    let (gx, gy) = s.psi_grad(x, y).unwrap();
                    let fx = (s.psi(x + h, y) - s.psi(x - h, y)) / (2.0 * h);
                    let fy = (s.psi(x, y + h) - s.psi(x, y - h)) / (2.0 * h);
                    assert!(((fx - gx) / gx).abs() < 1e-6, "{k} ({x},{y})");
                    assert!(((fy - gy) / gy).abs() < 1e-6, "{k} ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn comparator_supergradients_match_differences_off_kinks() {
        let h = 1e-6;
        for k in [SurrogateKind::ExponentialConcave, SurrogateKind::LogisticConcave, SurrogateKind::HingeBivariate] {
            let s = spec(k);
            for &(x, y) in &[(0.3, -0.4), (2.0, 0.5), (-1.0, 3.0), (1.7, 2.2)] {
                let (gx, gy) = s.psi_supergradient(x, y);
                let fx = (s.psi(x + h, y) - s.psi(x - h, y)) / (2.0 * h);
                let fy = (s.psi(x, y + h) - s.psi(x, y - h)) / (2.0 * h);
                assert!((fx - gx).abs() < 1e-6 && (fy - gy).abs() < 1e-6, "{k} ({x},{y})");
            }
        }
    }

    #[test]
    fn logistic_condition_two_dense_grid() {
        let s = spec(SurrogateKind::LogisticSigmoid);
        let rep = check_condition_two(&s, &grid(-10.0, 10.0, 0.01)).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.points, 2001);
    }

    #[test]
    fn all_sigmoids_pass_condition_two() {
        for k in SurrogateKind::SIGMOIDS {
            let rep = check_condition_two(&spec(k), &grid(-10.0, 10.0, 0.01)).unwrap();
            assert!(rep.passed(), "{k}: {rep:?}");
        }
        let rep = check_condition_two(&SurrogateSpec::tanh(), &grid(-10.0, 10.0, 0.01)).unwrap();
        assert!(rep.passed());
    }

    #[test]
    fn hinge_rejected_before_checking() {
        assert!(check_condition_two(&spec(SurrogateKind::HingeBivariate), &[0.0]).is_err());
    }

    #[test]
    fn arctan_symmetry_point_is_exact() {
        let s = spec(SurrogateKind::ArctanSigmoid);
        assert_eq!(s.phi(0.0).unwrap() + s.phi(0.0).unwrap(), 2.0);
    }

    #[test]
    fn rational_envelope_is_tight() {
        let s = spec(SurrogateKind::RationalSigmoid);
        let d = s.phi_grad(1.0).unwrap();
        assert_eq!(d, 0.25);
        assert_eq!(envelope(&s, 1.0), 0.25);
        let rep = check_type_bounds(&s, &[1.0]).unwrap();
        assert!(rep.passed());
        assert_eq!(rep.tangencies, 1);
    }

    #[test]
    fn logistic_envelope_at_three() {
        let s = spec(SurrogateKind::LogisticSigmoid);
        let d = s.phi_grad(3.0).unwrap();
        assert!((d - 0.0904).abs() < 1e-4);
        assert!((envelope(&s, 3.0) - 0.0996).abs() < 1e-4);
        assert!(d < envelope(&s, 3.0));
    }

    #[test]
    fn type_bounds_skip_zero() {
        let rep = check_type_bounds(&spec(SurrogateKind::ArctanSigmoid), &[0.0, 1.0]).unwrap();
        assert_eq!(rep.points, 1);
    }

    #[test]
    fn table_constants() {
        let a = spec(SurrogateKind::RationalSigmoid);
        assert_eq!((a.type_class, a.b_phi, a.kappa), (TypeClass::A, 1.0, 2.0));
        let b = spec(SurrogateKind::ArctanSigmoid);
        assert_eq!((b.type_class, b.b_phi, b.kappa), (TypeClass::A, 2.0, 2.0));
        let c = spec(SurrogateKind::AlgebraicSigmoid);
        assert_eq!((c.type_class, c.kappa), (TypeClass::A, 3.0));
        assert_relative_eq!(c.b_phi, 8f64.sqrt());
        let d = spec(SurrogateKind::LogisticSigmoid);
        assert_eq!((d.type_class, d.b_phi, d.kappa), (TypeClass::B, 2.0, 1.0));
        for k in SurrogateKind::SIGMOIDS {
            assert_eq!(spec(k).c_phi, 2.0);
        }
        assert_eq!(spec(SurrogateKind::HingeBivariate).type_class, TypeClass::NotConditionTwo);
    }

    #[test]
    fn tanh_alias_matches_one_plus_tanh() {
        let s = SurrogateSpec::tanh();
        for x in grid(-4.0, 4.0, 0.1) {
            assert_relative_eq!(s.phi(x).unwrap(), 1.0 + x.tanh(), epsilon = 1e-14);
        }
        let rep = check_type_bounds(&s, &grid(-20.0, 20.0, 0.01)).unwrap();
        assert!(rep.passed());
    }

    #[test]
    fn keys_round_trip() {
        for k in SurrogateKind::ALL {
            assert_eq!(k.key().parse::<SurrogateSpec>().unwrap().kind, k);
        }
        assert!("sigmoid".parse::<SurrogateSpec>().is_err());
    }
}
