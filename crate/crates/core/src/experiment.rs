//! Replicated simulation benchmark: generate, train, evaluate by Monte Carlo,
//! aggregate. Replications are independent and run on a bounded worker pool.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{DtrError, Result};
use crate::evalkit::ipw_value;
use crate::policy::{ClassKind, ClassSpec};
use crate::qlearn::{q_learning, QForm};
use crate::rng::derive_seed;
use crate::simlab::{self, SettingSpec};
use crate::trainer::{train, TrainConfig};

pub const DEFAULT_N_EVAL: usize = 10_000;
pub const DESK_REPS: usize = 50;
pub const FULL_REPS: usize = 500;

/// Labels whether a run used the reduced or the full replication count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Full,
    Custom,
}

impl Scale {
    pub fn of_reps(reps: usize) -> Scale {
        match reps {
            DESK_REPS => Scale::Desk,
            FULL_REPS => Scale::Full,
            _ => Scale::Custom,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Full => "full",
            Scale::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub setting: u8,
    pub n_train: usize,
    pub n_eval: usize,
    pub reps: usize,
    pub seed: u64,
    pub class1: ClassSpec,
    pub class2: ClassSpec,
    pub train: TrainConfig,
    /// Also fit Q-learning of this form on each training set.
    pub q_learning: Option<QForm>,
}

impl BenchmarkConfig {
    pub fn new(setting: u8, n_train: usize, reps: usize, kind: ClassKind) -> BenchmarkConfig {
        BenchmarkConfig {
            setting,
            n_train,
            n_eval: DEFAULT_N_EVAL,
            reps,
            seed: 0,
            class1: ClassSpec::new(kind),
            class2: ClassSpec::new(kind),
            train: TrainConfig::default(),
            q_learning: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        simlab::dims(self.setting)?;
        if self.reps == 0 {
            return Err(DtrError::InvalidConfig("reps must be at least 1".into()));
        }
        if self.n_train == 0 || self.n_eval == 0 {
            return Err(DtrError::InvalidConfig("n_train and n_eval must be positive".into()));
        }
        self.train.validate(self.n_train)?;
        self.train.surrogate_spec()?;
        Ok(())
    }

    pub fn scale(&self) -> Scale {
        Scale::of_reps(self.reps)
    }

    /// Seeds of replication `rep`: (data, training, evaluation).
    pub fn rep_seeds(&self, rep: usize) -> (u64, u64, u64) {
        let base = derive_seed(self.seed, rep as u64);
        (derive_seed(base, 0), derive_seed(base, 1), derive_seed(base, 2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRow {
    pub rep: usize,
    pub method: String,
    pub value: Option<f64>,
    pub se: Option<f64>,
    pub train_objective: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub reps_ok: usize,
    pub reps_failed: usize,
    pub mean: f64,
    /// Standard deviation of the per-replication values.
    pub sd: f64,
}

impl AggregateRow {
    /// Standard error of `mean`.
    pub fn se(&self) -> f64 {
        if self.reps_ok == 0 {
            f64::NAN
        } else {
            self.sd / (self.reps_ok as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub setting: u8,
    pub n_train: usize,
    pub n_eval: usize,
    pub reps: usize,
    pub scale: Scale,
    pub rows: Vec<RepRow>,
    pub aggregates: Vec<AggregateRow>,
}

pub const REPORT_HEADER: &str = "setting,n_train,n_eval,scale,row,rep,method,value,se_or_sd,train_objective,reps_ok,reps_failed,error";

impl BenchmarkReport {
    pub fn aggregate(&self, method: &str) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.method == method)
    }

    /// Per-replication rows followed by one aggregate row per method.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let prefix = format!("{},{},{},{}", self.setting, self.n_train, self.n_eval, self.scale.key());
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n', '"'], " ");
            let _ = writeln!(
                s,
                "{prefix},rep,{},{},{},{},{},,,{}",
                r.rep,
                r.method,
                opt(r.value),
                opt(r.se),
                opt(r.train_objective),
                err
            );
        }
        for a in &self.aggregates {
            let _ = writeln!(s, "{prefix},aggregate,,{},{},{},,{},{},", a.method, a.mean, a.sd, a.reps_ok, a.reps_failed);
        }
        s
    }
}

fn dtr_method(cfg: &BenchmarkConfig) -> String {
    let (k1, k2) = (cfg.class1.kind, cfg.class2.kind);
    if k1 == k2 {
        format!("dtreslo-{k1}")
    } else {
        format!("dtreslo-{k1}-{k2}")
    }
}

fn q_method(form: &QForm) -> &'static str {
    match form {
        QForm::Linear => "qlearn-linear",
        QForm::Mlp(_) => "qlearn-mlp",
    }
}

fn run_rep(cfg: &BenchmarkConfig, rep: usize) -> Vec<RepRow> {
    let (data_seed, train_seed, eval_seed) = cfg.rep_seeds(rep);
    let failed = |method: String, e: DtrError| RepRow {
        rep,
        method,
        value: None,
        se: None,
        train_objective: None,
        error: Some(e.to_string()),
    };
    let method = dtr_method(cfg);
    let data = match SettingSpec::new(cfg.setting, cfg.n_train, data_seed).and_then(|s| simlab::generate(&s)) {
        Ok(d) => d,
        Err(e) => {
            let mut rows = vec![failed(method, DtrError::Precondition(e.to_string()))];
            if let Some(f) = &cfg.q_learning {
                rows.push(failed(q_method(f).into(), DtrError::Precondition(e.to_string())));
            }
            return rows;
        }
    };
    let mut rows = Vec::new();
    let tc = TrainConfig { seed: train_seed, ..cfg.train.clone() };
    let dtr = train(&data, &cfg.class1, &cfg.class2, &tc).and_then(|r| {
        let v = simlab::mc_value(cfg.setting, &r.pair, cfg.n_eval, eval_seed)?;
        Ok((v, r.final_objective))
    });
    rows.push(match dtr {
        Ok((v, obj)) => RepRow {
            rep,
            method,
            value: Some(v.value),
            se: Some(v.sd),
            train_objective: Some(obj),
            error: None,
        },
        Err(e) => failed(method, e),
    });
    if let Some(form) = &cfg.q_learning {
        let form = match form {
            QForm::Mlp(m) => QForm::Mlp(crate::qlearn::MlpQConfig { seed: train_seed, ..m.clone() }),
            f => f.clone(),
        };
        let q = q_learning(&data, &form).and_then(|p| simlab::mc_value(cfg.setting, &p, cfg.n_eval, eval_seed));
        rows.push(match q {
            Ok(v) => RepRow {
                rep,
                method: q_method(&form).into(),
                value: Some(v.value),
                se: Some(v.sd),
                train_objective: None,
                error: None,
            },
            Err(e) => failed(q_method(&form).into(), e),
        });
    }
    rows
}

/// Mean and SD (divisor `k − 1`) over the successful rows of each method,
/// methods in first-appearance order.
pub fn aggregate(rows: &[RepRow]) -> Vec<AggregateRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let vals: Vec<f64> = rows.iter().filter(|r| r.method == m).filter_map(|r| r.value).collect();
            let failed = rows.iter().filter(|r| r.method == m && r.value.is_none()).count();
            let k = vals.len();
            let mean = if k > 0 { vals.iter().sum::<f64>() / k as f64 } else { f64::NAN };
            let sd = if k > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
            } else {
                0.0
            };
            AggregateRow { method: m.to_string(), reps_ok: k, reps_failed: failed, mean, sd }
        })
        .collect()
}

/// Runs every replication. `threads = None` uses one worker per CPU. A
/// replication that fails yields rows carrying the error instead of aborting.
pub fn run_benchmark(cfg: &BenchmarkConfig, threads: Option<usize>) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build().map_err(|e| DtrError::InvalidConfig(format!("thread pool: {e}")))?;
    let mut per_rep: Vec<(usize, Vec<RepRow>)> =
        pool.install(|| (0..cfg.reps).into_par_iter().map(|r| (r, run_rep(cfg, r))).collect());
    per_rep.sort_by_key(|(r, _)| *r);
    let rows: Vec<RepRow> = per_rep.into_iter().flat_map(|(_, rows)| rows).collect();
    Ok(BenchmarkReport {
        setting: cfg.setting,
        n_train: cfg.n_train,
        n_eval: cfg.n_eval,
        reps: cfg.reps,
        scale: cfg.scale(),
        aggregates: aggregate(&rows),
        rows,
    })
}

pub const DEFAULT_FOLDS: usize = 5;

/// Fold index per row, stratified by the stage-1 action: each action's rows
/// are shuffled and dealt round-robin.
pub fn stratified_folds(d: &Dataset, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; d.len()];
    let mut next = 0;
    for a in [1.0, -1.0] {
        let mut rows: Vec<usize> = (0..d.len()).filter(|&i| d.trajectories[i].a1 == a).collect();
        rows.shuffle(&mut rng);
        for i in rows {
            fold[i] = next % k;
            next += 1;
        }
    }
    fold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub surrogate: String,
    /// Mean held-out IPW value over folds.
    pub value: f64,
    pub fold_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSelection {
    pub best: String,
    pub scores: Vec<CvScore>,
}

/// K-fold choice of φ: train on K−1 folds per candidate, score by the IPW
/// value on the held-out fold, keep the largest mean (first wins ties).
pub fn select_surrogate_cv(
    d: &Dataset,
    class1: &ClassSpec,
    class2: &ClassSpec,
    cfg: &TrainConfig,
    candidates: &[String],
    k: usize,
) -> Result<CvSelection> {
    if candidates.is_empty() {
        return Err(DtrError::InvalidConfig("no candidate surrogates".into()));
    }
    if k < 2 || k > d.len() {
        return Err(DtrError::InvalidConfig(format!("fold count must be in 2..={}, got {k}", d.len())));
    }
    let fold = stratified_folds(d, k, derive_seed(cfg.seed, 0xF01D));
    let mut scores = Vec::with_capacity(candidates.len());
    for name in candidates {
        let c = TrainConfig { surrogate: name.clone(), ..cfg.clone() };
        c.surrogate_spec()?;
        let mut fold_values = Vec::with_capacity(k);
        for f in 0..k {
            let train_rows: Vec<usize> = (0..d.len()).filter(|&i| fold[i] != f).collect();
            let test_rows: Vec<usize> = (0..d.len()).filter(|&i| fold[i] == f).collect();
            let tr = d.subset(&train_rows);
            let batch = c.batch_size.min(tr.len());
            let fit = train(&tr, class1, class2, &TrainConfig { batch_size: batch, ..c.clone() })?;
            fold_values.push(ipw_value(&d.subset(&test_rows), &fit.pair)?.value);
        }
        let value = fold_values.iter().sum::<f64>() / k as f64;
        scores.push(CvScore { surrogate: name.clone(), value, fold_values });
    }
    let best = scores
        .iter()
        .fold(None::<&CvScore>, |b, s| match b {
            Some(b) if b.value >= s.value => Some(b),
            _ => Some(s),
        })
        .map(|s| s.surrogate.clone())
        .unwrap();
    Ok(CvSelection { best, scores })
}
