//! Experiment configuration file: flat `key = value` pairs plus optional
//! `[train]`, `[class1]`, `[class2]` and `[qlearn]` sections (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dtr_core::experiment::{BenchmarkConfig, DEFAULT_N_EVAL, DESK_REPS};
use dtr_core::policy::{ClassKind, ClassSpec};
use dtr_core::qlearn::{MlpQConfig, QForm};
use dtr_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSection {
    pub kind: Option<String>,
    pub standardize: Option<bool>,
    pub wavelet_levels: Option<u32>,
    pub hidden: Option<Vec<usize>>,
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QSection {
    /// `"linear"` or `"mlp"`.
    pub form: String,
    #[serde(default)]
    pub mlp: Option<MlpQConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setting: Option<u8>,
    pub data: Option<PathBuf>,
    /// Policy class for both stages unless a stage section overrides it.
    pub class: String,
    pub methods: Vec<String>,
    pub n_train: usize,
    pub n_eval: usize,
    pub reps: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Candidate surrogate keys for cross-validated selection when training.
    pub cv_surrogates: Vec<String>,
    pub cv_folds: usize,
    pub train: TrainConfig,
    pub class1: ClassSection,
    pub class2: ClassSection,
    pub qlearn: Option<QSection>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            setting: None,
            data: None,
            class: "linear".into(),
            methods: vec!["mc".into()],
            n_train: 2500,
            n_eval: DEFAULT_N_EVAL,
            reps: DESK_REPS,
            seed: 0,
            output_dir: None,
            cv_surrogates: Vec::new(),
            cv_folds: dtr_core::experiment::DEFAULT_FOLDS,
            train: TrainConfig::default(),
            class1: ClassSection::default(),
            class2: ClassSection::default(),
            qlearn: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.check_enums()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
        // relative data paths are taken from the config file's directory
        if let (Some(d), Some(dir)) = (&cfg.data, path.parent()) {
            if d.is_relative() {
                cfg.data = Some(dir.join(d));
            }
        }
        if let Some(d) = &cfg.data {
            if !d.exists() {
                bail!("data file {} does not exist", d.display());
            }
        }
        Ok(cfg)
    }

    fn check_enums(&self) -> anyhow::Result<()> {
        if let Some(s) = self.setting {
            dtr_core::simlab::dims(s)?;
        }
        self.class_spec(1)?;
        self.class_spec(2)?;
        for m in &self.methods {
            if !matches!(m.as_str(), "ipw" | "dr" | "mc") {
                bail!("unknown evaluation method {m:?}; expected ipw, dr or mc");
            }
        }
        self.train.surrogate.parse::<dtr_core::surrogate::SurrogateSpec>()?;
        for s in &self.cv_surrogates {
            s.parse::<dtr_core::surrogate::SurrogateSpec>()?;
        }
        self.q_form()?;
        Ok(())
    }

    pub fn class_spec(&self, stage: u8) -> anyhow::Result<ClassSpec> {
        let sec = if stage == 1 { &self.class1 } else { &self.class2 };
        let kind: ClassKind = sec.kind.as_deref().unwrap_or(&self.class).parse()?;
        let mut c = ClassSpec::new(kind);
        if let Some(v) = sec.standardize {
            c.standardize = v;
        }
        if let Some(v) = sec.wavelet_levels {
            c.wavelet_levels = v;
        }
        c.hidden = sec.hidden.clone();
        c.dropout = sec.dropout;
        Ok(c)
    }

    pub fn q_form(&self) -> anyhow::Result<Option<QForm>> {
        match &self.qlearn {
            None => Ok(None),
            Some(q) => match q.form.as_str() {
                "linear" => Ok(Some(QForm::Linear)),
                "mlp" => Ok(Some(QForm::Mlp(q.mlp.clone().unwrap_or_default()))),
                other => bail!("unknown Q-learning form {other:?}; expected linear or mlp"),
            },
        }
    }

    pub fn benchmark(&self) -> anyhow::Result<BenchmarkConfig> {
        let Some(setting) = self.setting else {
            bail!("benchmark needs `setting`");
        };
        Ok(BenchmarkConfig {
            setting,
            n_train: self.n_train,
            n_eval: self.n_eval,
            reps: self.reps,
            seed: self.seed,
            class1: self.class_spec(1)?,
            class2: self.class_spec(2)?,
            train: self.train.clone(),
            q_learning: self.q_form()?,
        })
    }
}
