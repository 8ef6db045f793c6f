//! Empirical ψ-value objective and minibatch RMSprop ascent over both stage
//! policies at once.
//!
//! The objective is
//! `V̂ψ(f1, f2) = (1/n) Σ (Y1+Y2) ψ(A1 f1(H1), A2 f2(H2)) / (π1 π2)`,
//! and every step updates `θ1` and `θ2` from the same joint gradient.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Stage, Trajectory};
use crate::error::{DtrError, Result};
use crate::policy::{ClassSpec, FeatureMap, Policy, PolicyPair};
use crate::rng::derive_seed;
use crate::surrogate::SurrogateSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub surrogate: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub l1_lambda: f64,
    pub seed: u64,
    pub allow_inconsistent_surrogate: bool,
    /// Global-norm clip applied to the joint gradient before each step.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            surrogate: "arctan".into(),
            epochs: 20,
            batch_size: 128,
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            rmsprop_eps: 1e-8,
            l1_lambda: 0.0,
            seed: 0,
            allow_inconsistent_surrogate: false,
            grad_clip: 100.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(DtrError::InvalidConfig(m));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 || self.batch_size > n {
            return bad(format!("batch_size must be in 1..={n}, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return bad("rmsprop_decay must lie in (0, 1)".into());
        }
        if !(self.rmsprop_eps > 0.0) || !(self.l1_lambda >= 0.0) || !(self.grad_clip > 0.0) {
            return bad("rmsprop_eps and grad_clip must be positive, l1_lambda non-negative".into());
        }
        Ok(())
    }

    /// Parses the surrogate key and applies the consistency gate.
    pub fn surrogate_spec(&self) -> Result<SurrogateSpec> {
        let s: SurrogateSpec = self.surrogate.parse()?;
        if !s.is_sigmoid() && !self.allow_inconsistent_surrogate {
            return Err(DtrError::InconsistentSurrogate(s.kind.key()));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub pair: PolicyPair,
    /// Full-data objective before the first step.
    pub initial_objective: f64,
    /// Full-data objective after each epoch.
    pub objective_trace: Vec<f64>,
    pub final_objective: f64,
    pub config_echo: TrainConfig,
}

impl TrainResult {
    /// `epoch,objective` rows, epoch 0 being the initial value.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("epoch,objective\n");
        s.push_str(&format!("0,{}\n", self.initial_objective));
        for (i, v) in self.objective_trace.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, v));
        }
        s
    }
}

#[inline]
fn ipw_weight(t: &Trajectory) -> f64 {
    (t.y1 + t.y2) / (t.pi1 * t.pi2)
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

/// `V̂ψ` of a policy pair on a dataset, scores in evaluation mode.
pub fn surrogate_value_hat(d: &Dataset, s: &SurrogateSpec, pair: &PolicyPair) -> Result<f64> {
    check_floor(d)?;
    if d.is_empty() {
        return Err(DtrError::InvalidDataset("empty dataset".into()));
    }
    let mut sum = 0.0;
    for t in &d.trajectories {
        let f1 = pair.f1.eval(&t.history(Stage::One))?;
        let f2 = pair.f2.eval(&t.history(Stage::Two))?;
        sum += ipw_weight(t) * s.psi(t.a1 * f1, t.a2 * f2);
    }
    Ok(sum / d.len() as f64)
}

/// Gradient of the batch-mean objective minus `l1_lambda · ‖θ‖₁`, evaluation mode.
pub fn objective_grad(
    batch: &[Trajectory],
    s: &SurrogateSpec,
    pair: &PolicyPair,
    l1_lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    s.psi_grad(0.0, 0.0)?;
    let rows: Vec<Prepared> = batch.iter().map(|t| Prepared::new(t, &pair.f1, &pair.f2)).collect();
    let all: Vec<usize> = (0..rows.len()).collect();
    let mut g1 = vec![0.0; pair.f1.params.len()];
    let mut g2 = vec![0.0; pair.f2.params.len()];
    accumulate_grad(&rows, &all, s, &pair.f1, &pair.f2, None, &mut g1, &mut g2);
    apply_l1(&mut g1, &pair.f1.params, l1_lambda);
    apply_l1(&mut g2, &pair.f2.params, l1_lambda);
    Ok((g1, g2))
}

fn apply_l1(g: &mut [f64], params: &[f64], lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for (gi, p) in g.iter_mut().zip(params) {
        // sign(0) = 0
        if *p > 0.0 {
            *gi -= lambda;
        } else if *p < 0.0 {
            *gi += lambda;
        }
    }
}

/// One trajectory with both stage inputs precomputed.
struct Prepared {
    x1: Vec<f64>,
    x2: Vec<f64>,
    a1: f64,
    a2: f64,
    weight: f64,
}

impl Prepared {
    fn new(t: &Trajectory, f1: &Policy, f2: &Policy) -> Prepared {
        Prepared {
            x1: f1.featurize_values(&t.history(Stage::One).values),
            x2: f2.featurize_values(&t.history(Stage::Two).values),
            a1: t.a1,
            a2: t.a2,
            weight: ipw_weight(t),
        }
    }
}

/// Adds the batch-mean gradient into `g1`, `g2`. With an RNG, MLP scores use
/// fresh dropout masks per sample.
#[allow(clippy::too_many_arguments)]
fn accumulate_grad(
    rows: &[Prepared],
    batch: &[usize],
    s: &SurrogateSpec,
    f1: &Policy,
    f2: &Policy,
    mut dropout: Option<&mut ChaCha8Rng>,
    g1: &mut [f64],
    g2: &mut [f64],
) {
    let inv = 1.0 / batch.len() as f64;
    for &i in batch {
        let r = &rows[i];
        let (m1, m2) = match (&mut dropout, &f1.map, &f2.map) {
            (Some(rng), map1, map2) => (masks_for(map1, rng), masks_for(map2, rng)),
            _ => (None, None),
        };
        let (c1, score1) = forward(f1, &r.x1, m1.as_deref());
        let (c2, score2) = forward(f2, &r.x2, m2.as_deref());
        let (px, py) = s.psi_supergradient(r.a1 * score1, r.a2 * score2);
        let k1 = inv * r.weight * px * r.a1;
        let k2 = inv * r.weight * py * r.a2;
        backward(f1, &r.x1, c1, m1.as_deref(), k1, g1);
        backward(f2, &r.x2, c2, m2.as_deref(), k2, g2);
    }
}

fn masks_for(map: &FeatureMap, rng: &mut ChaCha8Rng) -> Option<Vec<Vec<f64>>> {
    match map {
        FeatureMap::Mlp(m) if m.dropout > 0.0 => Some(m.sample_masks(rng)),
        _ => None,
    }
}

fn forward(f: &Policy, x: &[f64], masks: Option<&[Vec<f64>]>) -> (Option<crate::policy::mlp::ForwardCache>, f64) {
    match &f.map {
        FeatureMap::Mlp(m) => {
            let c = m.forward_cached(&f.params, x, masks);
            let out = c.output;
            (Some(c), out)
        }
        _ => (None, crate::policy::dot(&f.params, x)),
    }
}

fn backward(
    f: &Policy,
    x: &[f64],
    cache: Option<crate::policy::mlp::ForwardCache>,
    masks: Option<&[Vec<f64>]>,
    coef: f64,
    g: &mut [f64],
) {
    match (&f.map, cache) {
        (FeatureMap::Mlp(m), Some(c)) => m.backward(&f.params, &c, masks, coef, g),
        _ => {
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += coef * xi;
            }
        }
    }
}

fn full_objective(rows: &[Prepared], s: &SurrogateSpec, f1: &Policy, f2: &Policy) -> f64 {
    let sum: f64 = rows
        .iter()
        .map(|r| r.weight * s.psi(r.a1 * f1.score_input(&r.x1), r.a2 * f2.score_input(&r.x2)))
        .sum();
    sum / rows.len() as f64
}

/// RMSprop state for one parameter vector; `ascend` moves uphill.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub decay: f64,
    pub eps: f64,
    pub lr: f64,
    acc: Vec<f64>,
}

impl RmsProp {
    pub fn new(len: usize, lr: f64, decay: f64, eps: f64) -> RmsProp {
        RmsProp { decay, eps, lr, acc: vec![0.0; len] }
    }

    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        for ((p, g), v) in params.iter_mut().zip(grad).zip(self.acc.iter_mut()) {
            *v = self.decay * *v + (1.0 - self.decay) * g * g;
            *p += self.lr * g / (v.sqrt() + self.eps);
        }
    }
}

/// Scales the concatenated gradient down to norm `max_norm` if it is longer.
pub fn clip_global_norm(parts: &mut [&mut [f64]], max_norm: f64) {
    let norm = parts.iter().flat_map(|p| p.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for p in parts.iter_mut() {
            for v in p.iter_mut() {
                *v *= k;
            }
        }
    }
}

/// Fits both stage policies by maximising `V̂ψ` with minibatch RMSprop.
pub fn train(d: &Dataset, class1: &ClassSpec, class2: &ClassSpec, cfg: &TrainConfig) -> Result<TrainResult> {
    d.ensure_valid()?;
    cfg.validate(d.len())?;
    let s = cfg.surrogate_spec()?;
    let mut f1 = class1.instantiate(Stage::One, d, derive_seed(cfg.seed, 1));
    let mut f2 = class2.instantiate(Stage::Two, d, derive_seed(cfg.seed, 2));
    let rows: Vec<Prepared> = d.trajectories.iter().map(|t| Prepared::new(t, &f1, &f2)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt1 = RmsProp::new(f1.params.len(), cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_eps);
    let mut opt2 = RmsProp::new(f2.params.len(), cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_eps);
    let mut g1 = vec![0.0; f1.params.len()];
    let mut g2 = vec![0.0; f2.params.len()];

    let initial_objective = full_objective(&rows, &s, &f1, &f2);
    if !initial_objective.is_finite() {
        return Err(DtrError::NonFinite { epoch: 0, step: 0, detail: "initial objective".into() });
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            g1.iter_mut().for_each(|v| *v = 0.0);
            g2.iter_mut().for_each(|v| *v = 0.0);
            accumulate_grad(&rows, batch, &s, &f1, &f2, Some(&mut rng), &mut g1, &mut g2);
            apply_l1(&mut g1, &f1.params, cfg.l1_lambda);
            apply_l1(&mut g2, &f2.params, cfg.l1_lambda);
            if g1.iter().chain(g2.iter()).any(|v| !v.is_finite()) {
                return Err(DtrError::NonFinite { epoch, step, detail: "gradient".into() });
            }
            clip_global_norm(&mut [&mut g1, &mut g2], cfg.grad_clip);
            opt1.ascend(&mut f1.params, &g1);
            opt2.ascend(&mut f2.params, &g2);
        }
        let obj = full_objective(&rows, &s, &f1, &f2);
        if !obj.is_finite() {
            return Err(DtrError::NonFinite { epoch, step, detail: "objective".into() });
        }
        trace.push(obj);
    }
    let final_objective = *trace.last().unwrap();
    Ok(TrainResult {
        pair: PolicyPair::new(f1, f2, d.offset)?,
        initial_objective,
        objective_trace: trace,
        final_objective,
        config_echo: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{ClassKind, LinearMap};
    use crate::surrogate::SurrogateKind;

    fn traj(o1: f64, a1: f64, y1: f64, o2: f64, a2: f64, y2: f64) -> Trajectory {
        Trajectory { o1: vec![o1], a1, y1, o2: vec![o2], a2, y2, pi1: 0.5, pi2: 0.5 }
    }

    fn zero_pair(p1: usize, p2: usize) -> PolicyPair {
        PolicyPair::new(
            Policy::zeros(Stage::One, FeatureMap::Linear(LinearMap::new(p1, p2))),
            Policy::zeros(Stage::Two, FeatureMap::Linear(LinearMap::new(p1, p2))),
            0.0,
        )
        .unwrap()
    }

    fn logistic() -> SurrogateSpec {
        SurrogateSpec::new(SurrogateKind::LogisticSigmoid)
    }

    #[test]
    fn single_row_at_zero_scores() {
        let d = Dataset::new(vec![traj(0.0, 1.0, 1.0, 0.0, 1.0, 1.0)], 1, 1);
        assert_eq!(surrogate_value_hat(&d, &logistic(), &zero_pair(1, 1)).unwrap(), 8.0);
    }

    #[test]
    fn single_row_at_large_scores() {
        let d = Dataset::new(vec![traj(0.0, 1.0, 1.0, 0.0, 1.0, 1.0)], 1, 1);
        let mut pair = zero_pair(1, 1);
        pair.f1.params[0] = 50.0;
        pair.f2.params[0] = 50.0;
        let v = surrogate_value_hat(&d, &logistic(), &pair).unwrap();
        assert!((v - 32.0).abs() < 0.5);
    }

    #[test]
    fn positivity_violation_errors() {
        let mut t = traj(0.0, 1.0, 1.0, 0.0, 1.0, 1.0);
        t.pi2 = 1e-5;
        let d = Dataset::new(vec![t], 1, 1);
        assert!(matches!(
            surrogate_value_hat(&d, &logistic(), &zero_pair(1, 1)),
            Err(DtrError::PositivityViolation { .. })
        ));
    }

    #[test]
    fn symmetric_batch_cancels_action_features() {
        // opposite actions, equal weights, zero policies: the intercept and the
        // other features move with a1, so their stage-1 components cancel
        let batch = vec![traj(0.5, 1.0, 1.0, 0.2, 1.0, 1.0), traj(0.5, -1.0, 1.0, 0.2, 1.0, 1.0)];
        let (g1, g2) = objective_grad(&batch, &logistic(), &zero_pair(1, 1), 0.0).unwrap();
        for v in &g1 {
            assert!(v.abs() < 1e-15, "{g1:?}");
        }
        // stage 2 sees the same action twice, but a1 enters H2 with opposite signs
        let a1_slot = 1 + 3;
        assert!(g2[a1_slot].abs() < 1e-15);
        assert!(g2[0] > 0.0);
    }

    #[test]
    fn l1_at_zero_is_inert() {
        let batch = vec![traj(0.5, 1.0, 1.0, 0.2, -1.0, 2.0), traj(-0.1, -1.0, 3.0, 0.7, 1.0, 1.0)];
        let a = objective_grad(&batch, &logistic(), &zero_pair(1, 1), 0.0).unwrap();
        let b = objective_grad(&batch, &logistic(), &zero_pair(1, 1), 0.7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig { epochs: 0, ..Default::default() };
        assert!(c.validate(100).is_err());
        c.epochs = 1;
        assert!(c.validate(100).is_err()); // batch 128 > n
        assert!(c.validate(128).is_ok());
        c.rmsprop_decay = 1.0;
        assert!(c.validate(128).is_err());
    }

    #[test]
    fn inconsistent_surrogate_gate() {
        let mut c = TrainConfig { surrogate: "exp-concave".into(), ..Default::default() };
        assert!(matches!(c.surrogate_spec(), Err(DtrError::InconsistentSurrogate(_))));
        c.allow_inconsistent_surrogate = true;
        assert!(c.surrogate_spec().is_ok());
    }

    #[test]
    fn rmsprop_step() {
        let mut opt = RmsProp::new(1, 0.1, 0.9, 1e-8);
        let mut p = vec![0.0];
        opt.ascend(&mut p, &[2.0]);
        // v = 0.1 * 4 = 0.4, step = 0.1 * 2 / (sqrt(0.4) + eps)
        assert!((p[0] - 0.1 * 2.0 / (0.4f64.sqrt() + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn clipping() {
        let mut a = vec![300.0, 0.0];
        let mut b = vec![400.0];
        clip_global_norm(&mut [&mut a, &mut b], 100.0);
        assert!((a[0] - 60.0).abs() < 1e-12 && (b[0] - 80.0).abs() < 1e-12);
    }

    #[test]
    fn train_rejects_zero_epochs() {
        let rows: Vec<_> = (0..10).map(|i| traj(i as f64, 1.0, 1.0, 0.0, -1.0, 1.0)).collect();
        let d = Dataset::new(rows, 1, 1);
        let cfg = TrainConfig { epochs: 0, batch_size: 5, ..Default::default() };
        let c = ClassSpec::new(ClassKind::Linear);
        assert!(matches!(train(&d, &c, &c, &cfg), Err(DtrError::InvalidConfig(_))));
    }

    fn probe_data(setting: u8, n: usize, seed: u64) -> Dataset {
        crate::simlab::generate(&crate::simlab::SettingSpec::new(setting, n, seed).unwrap()).unwrap()
    }

    fn probe_class(kind: ClassKind) -> ClassSpec {
        let mut c = ClassSpec::new(kind);
        if kind == ClassKind::Mlp {
            c.hidden = Some(vec![8, 4]);
        }
        c
    }

    /// Max-norm relative error between `objective_grad` and central
    /// differences of `surrogate_value_hat` on the same rows.
    fn fd_rel_error(d: &Dataset, kind: ClassKind, s: &SurrogateSpec, seed: u64) -> f64 {
        let c = probe_class(kind);
        let mut f1 = c.instantiate(Stage::One, d, seed);
        let mut f2 = c.instantiate(Stage::Two, d, seed + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in f1.params.iter_mut().chain(f2.params.iter_mut()) {
            *p += 0.3 * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng);
        }
        let pair = PolicyPair::new(f1, f2, d.offset).unwrap();
        let (g1, g2) = objective_grad(&d.trajectories, s, &pair, 0.0).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for stage in [Stage::One, Stage::Two] {
            let g = match stage {
                Stage::One => &g1,
                Stage::Two => &g2,
            };
            for (j, gj) in g.iter().enumerate() {
                let shifted = |delta: f64| {
                    let mut q = pair.clone();
                    match stage {
                        Stage::One => q.f1.params[j] += delta,
                        Stage::Two => q.f2.params[j] += delta,
                    }
                    surrogate_value_hat(d, s, &q).unwrap()
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                worst = worst.max((fd - gj).abs());
                scale = scale.max(fd.abs());
            }
        }
        worst / scale
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = probe_data(3, 12, 5);
        for kind in [ClassKind::Linear, ClassKind::Spline, ClassKind::Wavelet, ClassKind::Mlp] {
            let tol = if kind == ClassKind::Mlp { 1e-4 } else { 1e-5 };
            for sk in SurrogateKind::SIGMOIDS {
                let e = fd_rel_error(&d, kind, &SurrogateSpec::new(sk), 17);
                assert!(e < tol, "{kind} {sk}: {e}");
            }
        }
    }

    #[test]
    fn three_rows_hand_summed() {
        let rows = vec![
            traj(0.5, 1.0, 1.0, 0.2, -1.0, 2.0),
            traj(-0.1, -1.0, 3.0, 0.7, 1.0, 1.0),
            Trajectory { o1: vec![1.5], a1: 1.0, y1: 0.5, o2: vec![-0.3], a2: 1.0, y2: 0.25, pi1: 0.25, pi2: 0.8 },
        ];
        let d = Dataset::new(rows.clone(), 1, 1);
        let mut pair = zero_pair(1, 1);
        pair.f1.params.iter_mut().enumerate().for_each(|(i, p)| *p = 0.3 - 0.2 * i as f64);
        pair.f2.params.iter_mut().enumerate().for_each(|(i, p)| *p = -0.1 + 0.15 * i as f64);
        let s = logistic();
        let mut expect = 0.0;
        for t in &rows {
            let x = t.a1 * pair.f1.eval(&t.history(Stage::One)).unwrap();
            let y = t.a2 * pair.f2.eval(&t.history(Stage::Two)).unwrap();
            expect += (t.y1 + t.y2) * s.psi(x, y) / (t.pi1 * t.pi2);
        }
        expect /= 3.0;
        assert_eq!(surrogate_value_hat(&d, &s, &pair).unwrap(), expect);
    }

    #[test]
    fn linear_in_rewards() {
        let d = probe_data(1, 50, 3);
        let c = ClassSpec::new(ClassKind::Linear);
        let cfg = TrainConfig { epochs: 2, batch_size: 10, seed: 1, ..Default::default() };
        let mut pair = train(&d, &c, &c, &cfg).unwrap().pair;
        // Y1 is also a stage-2 input; drop its coefficient so the scores are
        // untouched by the rescaling
        pair.f2.params[1 + d.p1] = 0.0;
        let s = logistic();
        let base = surrogate_value_hat(&d, &s, &pair).unwrap();
        // powers of two keep the scaling exact in floating point
        for k in [0.25, 2.0, 8.0] {
            assert_eq!(surrogate_value_hat(&d.scale_rewards(k), &s, &pair).unwrap(), k * base);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let d = probe_data(2, 300, 8);
        let c = probe_class(ClassKind::Mlp);
        let cfg = TrainConfig { epochs: 3, batch_size: 64, seed: 21, ..Default::default() };
        let a = train(&d, &c, &c, &cfg).unwrap();
        let b = train(&d, &c, &c, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.objective_trace.len(), 3);
    }

    #[test]
    fn setting1_ascent() {
        let d = probe_data(1, 2500, 7);
        let c = ClassSpec::new(ClassKind::Linear);
        let r = train(&d, &c, &c, &TrainConfig { seed: 7, ..Default::default() }).unwrap();
        assert!(r.final_objective > r.initial_objective, "{} vs {}", r.final_objective, r.initial_objective);
    }

    #[test]
    fn end_beats_start_on_settings_1_and_3() {
        let c = ClassSpec::new(ClassKind::Linear);
        for setting in [1u8, 3] {
            let improved = (0..20u64)
                .filter(|&seed| {
                    let d = probe_data(setting, 1000, 100 + seed);
                    let r = train(&d, &c, &c, &TrainConfig { seed, ..Default::default() }).unwrap();
                    r.final_objective > r.initial_objective
                })
                .count();
            assert!(improved >= 19, "setting {setting}: {improved}/20");
        }
    }

    #[test]
    fn trace_csv_has_epoch_rows() {
        let d = probe_data(2, 100, 2);
        let c = ClassSpec::new(ClassKind::Linear);
        let r = train(&d, &c, &c, &TrainConfig { epochs: 4, batch_size: 32, ..Default::default() }).unwrap();
        let csv = r.trace_csv();
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.starts_with("epoch,objective\n0,"));
    }
}
