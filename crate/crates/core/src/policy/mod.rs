//! Parameterised score functions `f_t(H_t; θ_t)` and the sign decision rule.
//!
//! Basis classes (linear, spline, wavelet) are linear in their parameters, so
//! their parameter gradient is the feature vector itself. The MLP class feeds
//! the (standardised) raw history to a ReLU network.

pub mod linear;
pub mod mlp;
pub mod spline;
pub mod wavelet;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Action, Dataset, History, Stage};
use crate::error::{DtrError, Result};

pub use linear::{LinearMap, Standardizer};
pub use mlp::MlpShape;
pub use spline::SplineMap;
pub use wavelet::WaveletMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKind {
    Linear,
    Spline,
    Wavelet,
    Mlp,
}

impl ClassKind {
    pub fn key(self) -> &'static str {
        match self {
            ClassKind::Linear => "linear",
            ClassKind::Spline => "spline",
            ClassKind::Wavelet => "wavelet",
            ClassKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ClassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ClassKind {
    type Err = DtrError;

    fn from_str(s: &str) -> Result<ClassKind> {
        match s {
            "linear" => Ok(ClassKind::Linear),
            "spline" => Ok(ClassKind::Spline),
            "wavelet" => Ok(ClassKind::Wavelet),
            "mlp" | "nn" => Ok(ClassKind::Mlp),
            other => Err(DtrError::InvalidConfig(format!("unknown policy class {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class_kind", content = "meta", rename_all = "snake_case")]
pub enum FeatureMap {
    Linear(LinearMap),
    Spline(SplineMap),
    Wavelet(WaveletMap),
    Mlp(MlpShape),
}

impl FeatureMap {
    pub fn kind(&self) -> ClassKind {
        match self {
            FeatureMap::Linear(_) => ClassKind::Linear,
            FeatureMap::Spline(_) => ClassKind::Spline,
            FeatureMap::Wavelet(_) => ClassKind::Wavelet,
            FeatureMap::Mlp(_) => ClassKind::Mlp,
        }
    }

    /// Length of the model input (features for basis classes, history for the MLP).
    pub fn input_dim(&self, stage: Stage) -> usize {
        match self {
            FeatureMap::Linear(m) => m.dim(stage),
            FeatureMap::Spline(m) => m.dim(),
            FeatureMap::Wavelet(m) => m.dim(),
            FeatureMap::Mlp(m) => m.input,
        }
    }

    pub fn param_count(&self, stage: Stage) -> usize {
        match self {
            FeatureMap::Mlp(m) => m.param_count(),
            other => other.input_dim(stage),
        }
    }
}

/// Serialised as `{stage, class_kind, meta, params}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub stage: Stage,
    #[serde(flatten)]
    pub map: FeatureMap,
    pub params: Vec<f64>,
}

impl Policy {
    pub fn new(stage: Stage, map: FeatureMap, params: Vec<f64>) -> Result<Policy> {
        let want = map.param_count(stage);
        if params.len() != want {
            return Err(DtrError::InvalidConfig(format!(
                "{} policy needs {want} parameters, got {}",
                map.kind(),
                params.len()
            )));
        }
        Ok(Policy { stage, map, params })
    }

    pub fn zeros(stage: Stage, map: FeatureMap) -> Policy {
        let n = map.param_count(stage);
        Policy { stage, map, params: vec![0.0; n] }
    }

    pub fn class_kind(&self) -> ClassKind {
        self.map.kind()
    }

    fn check_stage(&self, h: &History) -> Result<()> {
        if h.stage != self.stage {
            return Err(DtrError::StageMismatch { expected: self.stage, got: h.stage });
        }
        Ok(())
    }

    /// Model input for a history: the basis expansion, or the standardised raw
    /// history for the MLP.
    pub fn featurize(&self, h: &History) -> Result<Vec<f64>> {
        self.check_stage(h)?;
        Ok(self.featurize_values(&h.values))
    }

    pub(crate) fn featurize_values(&self, h: &[f64]) -> Vec<f64> {
        match &self.map {
            FeatureMap::Linear(m) => m.featurize(self.stage, h),
            FeatureMap::Spline(m) => m.featurize(h),
            FeatureMap::Wavelet(m) => m.featurize(h),
            FeatureMap::Mlp(m) => m.standardize(h),
        }
    }

    /// Score of an already featurised input, dropout disabled.
    pub fn score_input(&self, x: &[f64]) -> f64 {
        match &self.map {
            FeatureMap::Mlp(m) => m.forward(&self.params, x),
            _ => dot(&self.params, x),
        }
    }

    pub fn eval(&self, h: &History) -> Result<f64> {
        Ok(self.score_input(&self.featurize(h)?))
    }

    /// `∂f/∂θ` at `h` in evaluation mode.
    pub fn grad(&self, h: &History) -> Result<Vec<f64>> {
        let x = self.featurize(h)?;
        Ok(match &self.map {
            FeatureMap::Mlp(m) => {
                let cache = m.forward_cached(&self.params, &x, None);
                let mut g = vec![0.0; self.params.len()];
                m.backward(&self.params, &cache, None, 1.0, &mut g);
                g
            }
            _ => x,
        })
    }

    /// `+1` if the score is non-negative, else `-1`.
    pub fn decide(&self, h: &History) -> Result<Action> {
        Ok(Action::from_score(self.eval(h)?))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// True when a column takes at most two distinct values.
pub(crate) fn is_binary_column(col: &[f64]) -> bool {
    let mut distinct: Vec<f64> = Vec::with_capacity(3);
    for &v in col {
        if !distinct.contains(&v) {
            distinct.push(v);
            if distinct.len() > 2 {
                return false;
            }
        }
    }
    true
}

/// A two-stage decision rule. Histories handed to it carry stage-1 rewards on
/// the scale given by `history_offset`.
pub trait Regime: Sync {
    fn decide1(&self, h1: &History) -> Action;
    fn decide2(&self, h2: &History) -> Action;
    fn history_offset(&self) -> f64 {
        0.0
    }
}

/// Stage-2 history handed to `r`, built from a stage-1 reward on the raw scale.
pub fn regime_history2<R: Regime + ?Sized>(r: &R, o1: &[f64], y1_raw: f64, o2: &[f64], a1: Action) -> History {
    crate::data::Trajectory::history2_with(o1, y1_raw + r.history_offset(), o2, a1.value())
}

/// Decisions of `r` on observed trajectories whose rewards carry `data_offset`.
pub fn regime_decisions<R: Regime + ?Sized>(r: &R, t: &crate::data::Trajectory, data_offset: f64) -> (Action, Action) {
    let d1 = r.decide1(&t.history(Stage::One));
    let a1 = Action::from_code(t.a1).unwrap_or(Action::Plus);
    let d2 = r.decide2(&regime_history2(r, &t.o1, t.y1 - data_offset, &t.o2, a1));
    (d1, d2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPair {
    pub f1: Policy,
    pub f2: Policy,
    /// Reward offset of the data the pair was fitted on.
    #[serde(default)]
    pub reward_offset: f64,
}

impl PolicyPair {
    pub fn new(f1: Policy, f2: Policy, reward_offset: f64) -> Result<PolicyPair> {
        if f1.stage != Stage::One || f2.stage != Stage::Two {
            return Err(DtrError::InvalidConfig("policy pair must be (stage 1, stage 2)".into()));
        }
        Ok(PolicyPair { f1, f2, reward_offset })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<PolicyPair> {
        let p: PolicyPair = serde_json::from_str(s)?;
        PolicyPair::new(
            Policy::new(p.f1.stage, p.f1.map, p.f1.params)?,
            Policy::new(p.f2.stage, p.f2.map, p.f2.params)?,
            p.reward_offset,
        )
    }
}

impl Regime for PolicyPair {
    fn decide1(&self, h1: &History) -> Action {
        Action::from_score(self.f1.score_input(&self.f1.featurize_values(&h1.values)))
    }

    fn decide2(&self, h2: &History) -> Action {
        Action::from_score(self.f2.score_input(&self.f2.featurize_values(&h2.values)))
    }

    fn history_offset(&self) -> f64 {
        self.reward_offset
    }
}

/// How to instantiate a policy class on a given training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub kind: ClassKind,
    /// Z-score linear features / MLP inputs with training statistics.
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default = "default_levels")]
    pub wavelet_levels: u32,
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    #[serde(default)]
    pub dropout: Option<f64>,
}

fn default_true() -> bool {
    true
}

fn default_levels() -> u32 {
    5
}

impl ClassSpec {
    pub fn new(kind: ClassKind) -> ClassSpec {
        ClassSpec { kind, standardize: true, wavelet_levels: 5, hidden: None, dropout: None }
    }

    /// Fits the class metadata on `d` and returns the initial policy: zero
    /// parameters for basis classes, seeded Glorot weights for the MLP.
    pub fn instantiate(&self, stage: Stage, d: &Dataset, seed: u64) -> Policy {
        let histories: Vec<Vec<f64>> = d.trajectories.iter().map(|t| t.history(stage).values).collect();
        let dim = match stage {
            Stage::One => d.p1,
            Stage::Two => d.h2_len(),
        };
        let columns: Vec<Vec<f64>> = (0..dim).map(|j| histories.iter().map(|h| h[j]).collect()).collect();
        let map = match self.kind {
            ClassKind::Linear => {
                let mut m = LinearMap::new(d.p1, d.p2);
                if self.standardize {
                    let feats: Vec<Vec<f64>> = histories.iter().map(|h| m.featurize(stage, h)).collect();
                    m.standardizer = Some(Standardizer::fit(&feats, 1));
                }
                FeatureMap::Linear(m)
            }
            ClassKind::Spline => FeatureMap::Spline(SplineMap::fit(d.p1, d.p2, &columns)),
            ClassKind::Wavelet => {
                let coords = columns
                    .iter()
                    .map(|col| {
                        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                        if is_binary_column(col) || !(hi > lo) {
                            wavelet::WaveletCoord::Binary
                        } else {
                            wavelet::WaveletCoord::Continuous { lo, hi }
                        }
                    })
                    .collect();
                FeatureMap::Wavelet(WaveletMap { p1: d.p1, p2: d.p2, levels: self.wavelet_levels, coords })
            }
            ClassKind::Mlp => {
                let mut m = MlpShape::new(dim);
                if let Some(h) = &self.hidden {
                    m.hidden = h.clone();
                }
                if let Some(r) = self.dropout {
                    m.dropout = r;
                }
                if self.standardize {
                    let s = Standardizer::fit(&histories, 0);
                    m.center = s.center;
                    m.scale = s.scale;
                }
                FeatureMap::Mlp(m)
            }
        };
        match &map {
            FeatureMap::Mlp(m) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let params = m.init_params(&mut rng);
                Policy { stage, map, params }
            }
            _ => Policy::zeros(stage, map),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Trajectory;

    fn linear(stage: Stage, p1: usize, p2: usize, params: Vec<f64>) -> Policy {
        Policy::new(stage, FeatureMap::Linear(LinearMap::new(p1, p2)), params).unwrap()
    }

    fn h(stage: Stage, v: &[f64]) -> History {
        History { stage, values: v.to_vec() }
    }

    #[test]
    fn linear_stage_one_features() {
        let p = linear(Stage::One, 2, 0, vec![0.0; 3]);
        assert_eq!(p.featurize(&h(Stage::One, &[2.0, 3.0])).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn linear_stage_two_features() {
        let p = Policy::zeros(Stage::Two, FeatureMap::Linear(LinearMap::new(1, 1)));
        let (x, y1, z, a1) = (0.7, 2.0, -1.5, -1.0);
        assert_eq!(
            p.featurize(&h(Stage::Two, &[x, y1, z, a1])).unwrap(),
            vec![1.0, x, y1, z, a1, x * z, x * a1]
        );
    }

    #[test]
    fn stage_mismatch_errors() {
        let p = linear(Stage::One, 2, 0, vec![0.0; 3]);
        assert!(matches!(p.eval(&h(Stage::Two, &[1.0, 2.0])), Err(DtrError::StageMismatch { .. })));
        assert!(p.grad(&h(Stage::Two, &[1.0, 2.0])).is_err());
    }

    #[test]
    fn zero_and_intercept_policies() {
        let zero = linear(Stage::One, 2, 0, vec![0.0; 3]);
        let one = linear(Stage::One, 2, 0, vec![1.0, 0.0, 0.0]);
        for v in [[0.0, 0.0], [5.0, -3.0], [-1e6, 2.0]] {
            assert_eq!(zero.eval(&h(Stage::One, &v)).unwrap(), 0.0);
            assert_eq!(one.eval(&h(Stage::One, &v)).unwrap(), 1.0);
        }
    }

    #[test]
    fn linear_grad_is_features() {
        let p = linear(Stage::One, 2, 0, vec![0.3, -1.0, 2.0]);
        let hh = h(Stage::One, &[4.0, 5.0]);
        assert_eq!(p.grad(&hh).unwrap(), p.featurize(&hh).unwrap());
    }

    #[test]
    fn decide_tie_goes_to_plus() {
        let mk = |b: f64| linear(Stage::One, 0, 0, vec![b]);
        let e = h(Stage::One, &[]);
        assert_eq!(mk(0.0).decide(&e).unwrap(), Action::Plus);
        assert_eq!(mk(-0.001).decide(&e).unwrap(), Action::Minus);
        assert_eq!(mk(3.0).decide(&e).unwrap(), Action::Plus);
    }

    #[test]
    fn params_length_checked() {
        assert!(Policy::new(Stage::One, FeatureMap::Linear(LinearMap::new(2, 0)), vec![0.0; 2]).is_err());
    }

    #[test]
    fn mlp_zero_weights() {
        let m = MlpShape::new(3);
        let p = Policy::zeros(Stage::One, FeatureMap::Mlp(m));
        assert_eq!(p.eval(&h(Stage::One, &[1.0, 2.0, 3.0])).unwrap(), 0.0);
    }

    fn toy_dataset() -> Dataset {
        let rows = (0..40)
            .map(|i| {
                let x = i as f64 / 7.0 - 2.0;
                Trajectory {
                    o1: vec![x, if i % 2 == 0 { 1.0 } else { -1.0 }],
                    a1: if i % 3 == 0 { 1.0 } else { -1.0 },
                    y1: 1.0 + (x * 1.3).sin().abs(),
                    o2: vec![x * x],
                    a2: if i % 5 < 2 { 1.0 } else { -1.0 },
                    y2: 2.0 + x.cos(),
                    pi1: 0.5,
                    pi2: 0.5,
                }
            })
            .collect();
        Dataset::new(rows, 2, 1)
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let d = toy_dataset();
        for kind in [ClassKind::Linear, ClassKind::Spline, ClassKind::Wavelet, ClassKind::Mlp] {
            let spec = ClassSpec::new(kind);
            let mut f1 = spec.instantiate(Stage::One, &d, 1);
            let mut f2 = spec.instantiate(Stage::Two, &d, 2);
            for (i, v) in f1.params.iter_mut().enumerate() {
                *v = (i as f64 * 0.37).sin() / 3.0;
            }
            for (i, v) in f2.params.iter_mut().enumerate() {
                *v = (i as f64 * 1.1).cos() * 1e-3 + f64::EPSILON;
            }
            let pair = PolicyPair::new(f1, f2, 0.5).unwrap();
            let text = pair.to_json().unwrap();
            let back = PolicyPair::from_json(&text).unwrap();
            assert_eq!(back, pair, "{kind}");
            for (a, b) in back.f2.params.iter().zip(&pair.f2.params) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            let v: serde_json::Value = serde_json::from_str(&text).unwrap();
            assert_eq!(v["f1"]["class_kind"], kind.key());
            assert_eq!(v["f1"]["stage"], 1);
            assert!(v["f1"]["meta"].is_object() && v["f1"]["params"].is_array());
        }
    }

    #[test]
    fn dims_are_a_function_of_class_and_shape() {
        let d = toy_dataset();
        let lin = ClassSpec::new(ClassKind::Linear).instantiate(Stage::Two, &d, 0);
        // 1 + h(5) + o1×o2 (2) + o1×a1 (2)
        assert_eq!(lin.params.len(), 10);
        let mlp = ClassSpec::new(ClassKind::Mlp).instantiate(Stage::Two, &d, 0);
        assert_eq!(mlp.params.len(), MlpShape::new(5).param_count());
        let spl = ClassSpec::new(ClassKind::Spline).instantiate(Stage::One, &d, 0);
        assert_eq!(spl.params.len(), 1 + 4 + 1);
        let wav = ClassSpec::new(ClassKind::Wavelet).instantiate(Stage::One, &d, 0);
        assert_eq!(wav.params.len(), 1 + wavelet::basis_len(5) + 1);
        for t in &d.trajectories {
            assert_eq!(wav.featurize(&t.history(Stage::One)).unwrap().len(), wav.params.len());
            assert_eq!(spl.featurize(&t.history(Stage::One)).unwrap().len(), spl.params.len());
        }
    }

    #[test]
    fn basis_grads_do_not_depend_on_params() {
        let d = toy_dataset();
        for kind in [ClassKind::Linear, ClassKind::Spline, ClassKind::Wavelet] {
            let mut p = ClassSpec::new(kind).instantiate(Stage::Two, &d, 0);
            let hh = d.trajectories[3].history(Stage::Two);
            let g0 = p.grad(&hh).unwrap();
            for (i, v) in p.params.iter_mut().enumerate() {
                *v = i as f64 - 3.0;
            }
            assert_eq!(p.grad(&hh).unwrap(), g0);
        }
    }

    #[test]
    fn mlp_policy_grad_matches_finite_differences() {
        let d = toy_dataset();
        let mut spec = ClassSpec::new(ClassKind::Mlp);
        spec.hidden = Some(vec![16, 8]);
        let p = spec.instantiate(Stage::Two, &d, 9);
        let hh = d.trajectories[5].history(Stage::Two);
        let g = p.grad(&hh).unwrap();
        let eps = 1e-6;
        let mut q = p.clone();
        for (i, gi) in g.iter().enumerate() {
            q.params[i] = p.params[i] + eps;
            let up = q.eval(&hh).unwrap();
            q.params[i] = p.params[i] - eps;
            let dn = q.eval(&hh).unwrap();
            q.params[i] = p.params[i];
            let fd = (up - dn) / (2.0 * eps);
            assert!((fd - gi).abs() <= 1e-4 * gi.abs().max(1e-6) || (fd - gi).abs() < 1e-10, "param {i}");
        }
    }
}
