//! Two-stage Q-learning: regress `Y2` on `(H2, A2)`, build pseudo-outcomes
//! `Y1 + max_a Q2(H2, a)`, regress them on `(H1, A1)`, act greedily.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Action, Dataset, History, Stage};
use crate::error::{DtrError, Result};
use crate::policy::{MlpShape, Regime, Standardizer};
use crate::rng::derive_seed;
use crate::trainer::{clip_global_norm, RmsProp, TrainConfig};

/// Ridge added to the normal equations `XᵀX + λI`.
pub const RIDGE: f64 = 1e-8;

/// Anything that scores a `(history, action)` pair.
pub trait QFunction: Sync {
    fn q(&self, h: &[f64], a: f64) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpQConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpQConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        MlpQConfig {
            hidden: crate::policy::mlp::DEFAULT_HIDDEN.to_vec(),
            dropout: crate::policy::mlp::DEFAULT_DROPOUT,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum QForm {
    Linear,
    Mlp(MlpQConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum QParams {
    /// `Q = xᵀθ0 + A xᵀθ1` with `x = (1, H)`.
    Linear { theta0: Vec<f64>, theta1: Vec<f64> },
    /// `Q = target_center + target_scale · net((H, A) standardised)`.
    Mlp { shape: MlpShape, params: Vec<f64>, target_center: f64, target_scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QModel {
    pub stage: Stage,
    pub params: QParams,
    pub fitted: bool,
}

fn with_intercept(h: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(h.len() + 1);
    x.push(1.0);
    x.extend_from_slice(h);
    x
}

impl QModel {
    /// Treatment-interaction score `xᵀθ1` of the linear form.
    pub fn blip(&self, h: &[f64]) -> Option<f64> {
        match &self.params {
            QParams::Linear { theta1, .. } => Some(crate::policy::dot(theta1, &with_intercept(h))),
            QParams::Mlp { .. } => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl QFunction for QModel {
    fn q(&self, h: &[f64], a: f64) -> f64 {
        match &self.params {
            QParams::Linear { theta0, theta1 } => {
                let x = with_intercept(h);
                crate::policy::dot(theta0, &x) + a * crate::policy::dot(theta1, &x)
            }
            QParams::Mlp { shape, params, target_center, target_scale } => {
                let mut x = h.to_vec();
                x.push(a);
                target_center + target_scale * shape.forward(params, &shape.standardize(&x))
            }
        }
    }
}

/// Least squares on `[x, A x]` by the ridged normal equations.
fn fit_linear(histories: &[Vec<f64>], actions: &[f64], targets: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = histories.len();
    if n == 0 {
        return Err(DtrError::InvalidDataset("no rows to fit".into()));
    }
    let k = histories[0].len() + 1;
    let design = DMatrix::from_fn(n, 2 * k, |i, j| {
        let x = if j % k == 0 { 1.0 } else { histories[i][j % k - 1] };
        if j < k {
            x
        } else {
            actions[i] * x
        }
    });
    let y = DVector::from_column_slice(targets);
    let gram = design.transpose() * &design + DMatrix::identity(2 * k, 2 * k) * RIDGE;
    let rhs = design.transpose() * y;
    let chol = gram
        .cholesky()
        .ok_or_else(|| DtrError::SingularDesign(format!("{n} rows, {} columns", 2 * k)))?;
    let theta = chol.solve(&rhs);
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(DtrError::SingularDesign("non-finite solution".into()));
    }
    Ok((theta.rows(0, k).iter().copied().collect(), theta.rows(k, k).iter().copied().collect()))
}

/// Squared-loss network fit with the policy trainer's RMSprop and clipping.
fn fit_mlp(histories: &[Vec<f64>], actions: &[f64], targets: &[f64], cfg: &MlpQConfig) -> Result<QParams> {
    let n = histories.len();
    if n == 0 {
        return Err(DtrError::InvalidDataset("no rows to fit".into()));
    }
    let inputs: Vec<Vec<f64>> = histories
        .iter()
        .zip(actions)
        .map(|(h, a)| {
            let mut x = h.clone();
            x.push(*a);
            x
        })
        .collect();
    let stdz = Standardizer::fit(&inputs, 0);
    let mut shape = MlpShape::new(inputs[0].len());
    shape.hidden = cfg.hidden.clone();
    shape.dropout = cfg.dropout;
    shape.center = stdz.center;
    shape.scale = stdz.scale;
    let xs: Vec<Vec<f64>> = inputs.iter().map(|x| shape.standardize(x)).collect();

    let center = targets.iter().sum::<f64>() / n as f64;
    let var = targets.iter().map(|t| (t - center).powi(2)).sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = shape.init_params(&mut rng);
    if !(var > 0.0) {
        // constant target: the fit is exact with a zero output scale
        return Ok(QParams::Mlp { shape, params, target_center: center, target_scale: 0.0 });
    }
    let scale = var.sqrt();
    let ts: Vec<f64> = targets.iter().map(|t| (t - center) / scale).collect();
    let d = TrainConfig::default();
    let mut opt = RmsProp::new(params.len(), cfg.learning_rate, d.rmsprop_decay, d.rmsprop_eps);
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..n).collect();
    let batch = cfg.batch_size.clamp(1, n);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            step += 1;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let masks = (shape.dropout > 0.0).then(|| shape.sample_masks(&mut rng));
                let cache = shape.forward_cached(&params, &xs[i], masks.as_deref());
                // ascent on −(out − t)²
                let coef = -2.0 * (cache.output - ts[i]) * inv;
                shape.backward(&params, &cache, masks.as_deref(), coef, &mut grad);
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(DtrError::NonFinite { epoch, step, detail: "Q-network gradient".into() });
            }
            clip_global_norm(&mut [&mut grad], d.grad_clip);
            opt.ascend(&mut params, &grad);
        }
    }
    Ok(QParams::Mlp { shape, params, target_center: center, target_scale: scale })
}

fn fit_stage(stage: Stage, d: &Dataset, targets: &[f64], form: &QForm) -> Result<QModel> {
    if targets.len() != d.len() {
        return Err(DtrError::InvalidDataset(format!("{} targets for {} rows", targets.len(), d.len())));
    }
    let histories: Vec<Vec<f64>> = d.trajectories.iter().map(|t| t.history(stage).values).collect();
    let actions: Vec<f64> = d
        .trajectories
        .iter()
        .map(|t| match stage {
            Stage::One => t.a1,
            Stage::Two => t.a2,
        })
        .collect();
    let params = match form {
        QForm::Linear => {
            let (theta0, theta1) = fit_linear(&histories, &actions, targets)?;
            QParams::Linear { theta0, theta1 }
        }
        QForm::Mlp(cfg) => {
            let mut cfg = cfg.clone();
            cfg.seed = derive_seed(cfg.seed, u8::from(stage) as u64);
            fit_mlp(&histories, &actions, targets, &cfg)?
        }
    };
    Ok(QModel { stage, params, fitted: true })
}

pub fn fit_q2(d: &Dataset, form: &QForm) -> Result<QModel> {
    d.ensure_valid()?;
    let y2: Vec<f64> = d.trajectories.iter().map(|t| t.y2).collect();
    fit_stage(Stage::Two, d, &y2, form)
}

/// `Ŷ1 = Y1 + max_a Q2(H2, a)` with the observed `A1` in `H2`.
pub fn pseudo_outcome(d: &Dataset, q2: &dyn QFunction) -> Vec<f64> {
    d.trajectories
        .iter()
        .map(|t| {
            let h2 = t.history(Stage::Two).values;
            t.y1 + q2.q(&h2, 1.0).max(q2.q(&h2, -1.0))
        })
        .collect()
}

pub fn fit_q1(d: &Dataset, pseudo: &[f64], form: &QForm) -> Result<QModel> {
    d.ensure_valid()?;
    fit_stage(Stage::One, d, pseudo, form)
}

/// Greedy rule `argmax_a Q(H, a)`, ties to `+1`.
pub fn greedy(q: &dyn QFunction, h: &[f64]) -> Action {
    if q.q(h, 1.0) >= q.q(h, -1.0) {
        Action::Plus
    } else {
        Action::Minus
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QPolicy {
    pub q1: QModel,
    pub q2: QModel,
    pub reward_offset: f64,
}

pub fn q_policy(q1: QModel, q2: QModel, reward_offset: f64) -> QPolicy {
    QPolicy { q1, q2, reward_offset }
}

impl Regime for QPolicy {
    fn decide1(&self, h1: &History) -> Action {
        greedy(&self.q1, &h1.values)
    }

    fn decide2(&self, h2: &History) -> Action {
        greedy(&self.q2, &h2.values)
    }

    fn history_offset(&self) -> f64 {
        self.reward_offset
    }
}

/// Backward fit of both stages.
pub fn q_learning(d: &Dataset, form: &QForm) -> Result<QPolicy> {
    let q2 = fit_q2(d, form)?;
    let pseudo = pseudo_outcome(d, &q2);
    let q1 = fit_q1(d, &pseudo, form)?;
    Ok(q_policy(q1, q2, d.offset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Trajectory;
    use rand::Rng;

    fn random_data(n: usize, seed: u64, y2: impl Fn(&[f64], f64) -> f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| {
                let o1 = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let a1 = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let y1 = rng.random_range(1.0..2.0);
                let o2 = vec![rng.random_range(-1.0..1.0)];
                let a2 = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let h2 = Trajectory::history2_with(&o1, y1, &o2, a1).values;
                Trajectory { o1, a1, y1, y2: y2(&h2, a2), o2, a2, pi1: 0.5, pi2: 0.5 }
            })
            .collect();
        Dataset::new(rows, 2, 1)
    }

    const C: [f64; 6] = [5.0, 0.3, -0.2, 0.5, 0.1, -0.4];
    const D: [f64; 6] = [0.2, -0.1, 0.4, 0.05, -0.3, 0.2];

    fn linear_truth(h: &[f64], a: f64) -> f64 {
        let x = with_intercept(h);
        crate::policy::dot(&C, &x) + a * crate::policy::dot(&D, &x)
    }

    #[test]
    fn noiseless_linear_recovery() {
        let d = random_data(200, 1, linear_truth);
        let q2 = fit_q2(&d, &QForm::Linear).unwrap();
        let QParams::Linear { theta0, theta1 } = &q2.params else { panic!() };
        for (a, b) in theta0.iter().zip(&C).chain(theta1.iter().zip(&D)) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let mse: f64 = d
            .trajectories
            .iter()
            .map(|t| (q2.q(&t.history(Stage::Two).values, t.a2) - t.y2).powi(2))
            .sum::<f64>()
            / d.len() as f64;
        assert!(mse < 1e-10, "{mse}");
    }

    #[test]
    fn constant_target_is_reproduced() {
        let d = random_data(150, 2, |_, _| 3.5);
        for form in [QForm::Linear, QForm::Mlp(MlpQConfig { hidden: vec![8, 4], ..Default::default() })] {
            let q2 = fit_q2(&d, &form).unwrap();
            for t in &d.trajectories {
                assert!((q2.q(&t.history(Stage::Two).values, t.a2) - 3.5).abs() < 1e-3);
            }
            let pseudo = vec![2.0; d.len()];
            let q1 = fit_q1(&d, &pseudo, &form).unwrap();
            for t in &d.trajectories {
                assert!((q1.q(&t.o1, t.a1) - 2.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn ridge_keeps_underdetermined_fit_finite() {
        let d = random_data(3, 3, linear_truth);
        let q2 = fit_q2(&d, &QForm::Linear).unwrap();
        let QParams::Linear { theta0, theta1 } = &q2.params else { panic!() };
        assert!(theta0.iter().chain(theta1).all(|v| v.is_finite()));
        let q1 = fit_q1(&d, &[1.0, 2.0, 3.0], &QForm::Linear).unwrap();
        assert!(q1.blip(&[0.0, 0.0]).unwrap().is_finite());
    }

    #[test]
    fn stage_one_noiseless_recovery() {
        let d = random_data(100, 4, |_, _| 1.0);
        let pseudo: Vec<f64> =
            d.trajectories.iter().map(|t| 1.0 + 2.0 * t.o1[0] - t.o1[1] + t.a1 * (0.5 - t.o1[1])).collect();
        let QParams::Linear { theta0, theta1 } = fit_q1(&d, &pseudo, &QForm::Linear).unwrap().params else {
            panic!()
        };
        for (a, b) in theta0.iter().zip([1.0, 2.0, -1.0]).chain(theta1.iter().zip([0.5, 0.0, -1.0])) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    fn linear_model(stage: Stage, theta0: Vec<f64>, theta1: Vec<f64>) -> QModel {
        QModel { stage, params: QParams::Linear { theta0, theta1 }, fitted: true }
    }

    #[test]
    fn pseudo_outcome_cases() {
        let d = random_data(100, 5, |_, _| 1.0);
        let main = vec![0.5, 1.0, -1.0, 0.2, 0.3, -0.7];
        let q = linear_model(Stage::Two, main.clone(), vec![0.0; 6]);
        for (t, p) in d.trajectories.iter().zip(pseudo_outcome(&d, &q)) {
            let x = with_intercept(&t.history(Stage::Two).values);
            assert!((p - (t.y1 + crate::policy::dot(&main, &x))).abs() < 1e-12);
        }
        let q = linear_model(Stage::Two, vec![0.0; 6], vec![3.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        for (t, p) in d.trajectories.iter().zip(pseudo_outcome(&d, &q)) {
            assert_eq!(p, t.y1 + 3.0);
        }
        // enumeration against the |blip| shortcut
        let q = linear_model(Stage::Two, main, vec![0.3, -1.0, 0.5, 0.2, 0.9, -0.4]);
        for (t, p) in d.trajectories.iter().zip(pseudo_outcome(&d, &q)) {
            let h = t.history(Stage::Two).values;
            let shortcut = t.y1 + q.q(&h, 0.0) + q.blip(&h).unwrap().abs();
            assert!((p - shortcut).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_rules() {
        let h = History { stage: Stage::One, values: vec![1.0] };
        let flat = q_policy(
            linear_model(Stage::One, vec![1.0, 1.0], vec![0.0, 0.0]),
            linear_model(Stage::Two, vec![0.0], vec![0.0]),
            0.0,
        );
        assert_eq!(flat.decide1(&h), Action::Plus);
        let neg = q_policy(
            linear_model(Stage::One, vec![0.0, 0.0], vec![-1.0, -1.0]),
            linear_model(Stage::Two, vec![0.0], vec![0.0]),
            0.0,
        );
        assert_eq!(neg.decide1(&h), Action::Minus);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let theta1: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q = linear_model(Stage::One, vec![0.4, -2.0, 1.0], theta1);
        for _ in 0..100 {
            let h = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            assert_eq!(greedy(&q, &h), Action::from_score(q.blip(&h).unwrap()));
        }
    }

    #[test]
    fn pipeline_is_deterministic() {
        let d = random_data(300, 7, |h, a| 3.0 + h[0] + a * h[2]);
        let form = QForm::Mlp(MlpQConfig { hidden: vec![16, 8], seed: 3, ..Default::default() });
        let a = q_learning(&d, &form).unwrap();
        let b = q_learning(&d, &form).unwrap();
        assert_eq!(a, b);
        let json = a.q2.to_json().unwrap();
        let back: QModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a.q2);
    }
}
