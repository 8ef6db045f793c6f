use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dtr_core::data::{Dataset, DatasetMeta};
use dtr_core::error::DtrError;
use dtr_core::evalkit::{self, PropensitySource, ValueEstimate};
use dtr_core::experiment::{run_benchmark, select_surrogate_cv};
use dtr_core::policy::PolicyPair;
use dtr_core::qlearn::{q_learning, MlpQConfig, QForm};
use dtr_core::simlab::{self, SettingSpec};
use dtr_core::trainer::train;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::{Cli, Command, Method, Propensity, QFormArg};

/// Bad flags or configuration; exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<UsageError>().is_some() || cause.downcast_ref::<toml::de::Error>().is_some() {
            return 2;
        }
        if let Some(d) = cause.downcast_ref::<DtrError>() {
            if matches!(
                d,
                DtrError::InvalidConfig(_)
                    | DtrError::InvalidSetting(_)
                    | DtrError::UnknownSurrogate(_)
                    | DtrError::InconsistentSurrogate(_)
            ) {
                return 2;
            }
        }
    }
    3
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.cmd {
        Command::Simulate { setting, n } => simulate(cli, *setting, *n),
        Command::Train { config, data, setting, n, class, surrogate, epochs, cv_surrogates } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(p).map_err(|e| usage(format!("{e:#}")))?,
                None => ExperimentConfig::default(),
            };
            if data.is_some() {
                cfg.data = data.clone();
            }
            if setting.is_some() {
                cfg.setting = *setting;
            }
            if let Some(n) = n {
                cfg.n_train = *n;
            }
            if let Some(c) = class {
                cfg.class = c.clone();
                cfg.class1.kind = None;
                cfg.class2.kind = None;
            }
            if let Some(s) = surrogate {
                cfg.train.surrogate = s.clone();
            }
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(c) = cv_surrogates {
                cfg.cv_surrogates = c.clone();
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            train_cmd(cli, &cfg)
        }
        Command::Evaluate { method, policy, data, setting, n_eval, propensity, q_form } => {
            evaluate(cli, *method, policy, data.as_deref(), *setting, *n_eval, *propensity, *q_form)
        }
        Command::Benchmark { config, reps } => {
            let mut cfg = ExperimentConfig::load(config).map_err(|e| usage(format!("{e:#}")))?;
            if let Some(r) = reps {
                cfg.reps = *r;
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            benchmark(cli, &cfg)
        }
        Command::Consistency { surrogate, tau } => {
            let r = dtr_core::consistency::consistency_report(surrogate, tau)?;
            emit_json(cli.out.as_deref(), &r)
        }
        Command::Report { inputs } => report(cli, inputs),
    }
}

/// Whole-file write to `path`, or stdout without one.
fn emit(path: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            Ok(out.flush()?)
        }
    }
}

fn emit_json<T: Serialize>(path: Option<&Path>, v: &T) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    emit(path, s.as_bytes())
}

fn simulate(cli: &Cli, setting: u8, n: usize) -> anyhow::Result<()> {
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let seed = cli.seed.unwrap_or(0);
    let d = simlab::generate(&SettingSpec::new(setting, n, seed)?)?;
    let mut buf = Vec::new();
    d.write_csv(&mut buf)?;
    emit(cli.out.as_deref(), &buf)?;
    if let Some(p) = &cli.out {
        DatasetMeta { offset: d.offset, positivity_floor: d.positivity_floor, setting: Some(setting), seed: Some(seed) }
            .save_beside(p)?;
        eprintln!("wrote {} rows (setting {setting}, seed {seed}, offset {}) to {}", d.len(), d.offset, p.display());
    }
    Ok(())
}

fn training_data(cfg: &ExperimentConfig) -> anyhow::Result<Dataset> {
    match (&cfg.data, cfg.setting) {
        (Some(p), _) => Dataset::load(p).with_context(|| format!("loading {}", p.display())),
        (None, Some(s)) => Ok(simlab::generate(&SettingSpec::new(s, cfg.n_train, cfg.seed)?)?),
        (None, None) => Err(usage("train needs --data or --setting")),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "policy".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn train_cmd(cli: &Cli, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let d = training_data(cfg)?;
    let c1 = cfg.class_spec(1).map_err(|e| usage(format!("{e:#}")))?;
    let c2 = cfg.class_spec(2).map_err(|e| usage(format!("{e:#}")))?;
    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;
    if tc.batch_size > d.len() {
        tc.batch_size = d.len();
    }
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| cfg.output_dir.clone().unwrap_or_default().join("policy.json"));
    if !cfg.cv_surrogates.is_empty() {
        let sel = select_surrogate_cv(&d, &c1, &c2, &tc, &cfg.cv_surrogates, cfg.cv_folds)?;
        std::fs::write(sibling(&out, ".cv.json"), serde_json::to_string_pretty(&sel)? + "\n")?;
        eprintln!("cross-validation picked {}", sel.best);
        tc.surrogate = sel.best;
    }
    let r = train(&d, &c1, &c2, &tc)?;
    std::fs::write(&out, r.pair.to_json()? + "\n").with_context(|| format!("writing {}", out.display()))?;
    std::fs::write(sibling(&out, ".trace.csv"), r.trace_csv())?;
    eprintln!(
        "trained on {} rows: objective {:.6} -> {:.6}; wrote {}",
        d.len(),
        r.initial_objective,
        r.final_objective,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EstimateJson {
    value: f64,
    sd: f64,
    method: &'static str,
    n: usize,
}

impl From<ValueEstimate> for EstimateJson {
    fn from(v: ValueEstimate) -> Self {
        EstimateJson { value: v.value, sd: v.sd, method: v.method.key(), n: v.n_used }
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    cli: &Cli,
    method: Method,
    policy: &Path,
    data: Option<&Path>,
    setting: Option<u8>,
    n_eval: usize,
    propensity: Propensity,
    q_form: QFormArg,
) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(policy).with_context(|| format!("reading {}", policy.display()))?;
    let pair = PolicyPair::from_json(&text)?;
    let load = || -> anyhow::Result<Dataset> {
        let p = data.ok_or_else(|| usage("this method needs --data"))?;
        Dataset::load(p).with_context(|| format!("loading {}", p.display()))
    };
    let est = match method {
        Method::Mc => {
            let s = setting.ok_or_else(|| usage("mc needs --setting"))?;
            if n_eval == 0 {
                return Err(usage("--n-eval must be at least 1"));
            }
            simlab::mc_value(s, &pair, n_eval, cli.seed.unwrap_or(0))?
        }
        Method::Ipw => match propensity {
            Propensity::Known => evalkit::ipw_value(&load()?, &pair)?,
            Propensity::Fitted => {
                let mut d = load()?;
                let m1 = evalkit::fit_propensity(&d, dtr_core::data::Stage::One)?;
                let m2 = evalkit::fit_propensity(&d, dtr_core::data::Stage::Two)?;
                for t in &mut d.trajectories {
                    t.pi1 = m1.prob_of(&t.history(dtr_core::data::Stage::One).values, t.a1);
                    t.pi2 = m2.prob_of(&t.history(dtr_core::data::Stage::Two).values, t.a2);
                }
                evalkit::ipw_value(&d, &pair)?
            }
        },
        Method::Dr => {
            let d = load()?;
            let form = match q_form {
                QFormArg::Linear => QForm::Linear,
                QFormArg::Mlp => QForm::Mlp(MlpQConfig { seed: cli.seed.unwrap_or(0), ..Default::default() }),
            };
            let q = q_learning(&d, &form)?;
            match propensity {
                Propensity::Known => evalkit::dr_value(&d, &pair, &q.q1, &q.q2, PropensitySource::Known)?,
                Propensity::Fitted => {
                    let m1 = evalkit::fit_propensity(&d, dtr_core::data::Stage::One)?;
                    let m2 = evalkit::fit_propensity(&d, dtr_core::data::Stage::Two)?;
                    evalkit::dr_value(&d, &pair, &q.q1, &q.q2, PropensitySource::Fitted(&m1, &m2))?
                }
            }
        }
    };
    emit_json(cli.out.as_deref(), &EstimateJson::from(est))
}

#[derive(Debug, Serialize)]
struct BenchmarkMeta<'a> {
    scale: &'static str,
    reps: usize,
    config: &'a dtr_core::experiment::BenchmarkConfig,
}

fn benchmark(cli: &Cli, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let b = cfg.benchmark().map_err(|e| usage(format!("{e:#}")))?;
    b.validate()?;
    let report = run_benchmark(&b, cli.threads)?;
    let out = cli.out.clone().or_else(|| cfg.output_dir.as_ref().map(|d| d.join("benchmark.csv")));
    emit(out.as_deref(), report.to_csv().as_bytes())?;
    if let Some(p) = &out {
        let meta = BenchmarkMeta { scale: report.scale.key(), reps: report.reps, config: &b };
        std::fs::write(sibling(p, ".meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    }
    for a in &report.aggregates {
        eprintln!(
            "{}: mean {:.4} sd {:.4} over {} reps ({} failed, {} scale)",
            a.method,
            a.mean,
            a.sd,
            a.reps_ok,
            a.reps_failed,
            report.scale.key()
        );
    }
    Ok(())
}

pub const TABLE_HEADER: &str = "setting,n_train,scale,method,mean,sd,reps_ok,reps_failed";

fn report(cli: &Cli, inputs: &[PathBuf]) -> anyhow::Result<()> {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for p in inputs {
        let mut rdr = csv::Reader::from_path(p).with_context(|| format!("reading {}", p.display()))?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>().join(",") != dtr_core::experiment::REPORT_HEADER {
            bail!("{} is not a benchmark report", p.display());
        }
        let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
        let (setting, n_train, scale, row, method, mean, sd, ok, failed) = (
            col("setting"),
            col("n_train"),
            col("scale"),
            col("row"),
            col("method"),
            col("value"),
            col("se_or_sd"),
            col("reps_ok"),
            col("reps_failed"),
        );
        for rec in rdr.records() {
            let rec = rec?;
            if &rec[row] != "aggregate" {
                continue;
            }
            out.push_str(
                &[setting, n_train, scale, method, mean, sd, ok, failed].map(|i| rec[i].to_string()).join(","),
            );
            out.push('\n');
        }
    }
    emit(cli.out.as_deref(), out.as_bytes())
}
