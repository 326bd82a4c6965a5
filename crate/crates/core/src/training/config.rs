use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::corpus::SyntheticSpec;
use crate::diffcore::AdamConfig;
use crate::losses::FusionConfig;
use crate::model::EncoderConfig;

/// Optimizer settings of one training phase. The `paper_*` fields carry the
/// values a full-size encoder would use; they are reported, never applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub learning_rate: f64,
    pub paper_learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub paper_batch_size: usize,
}

impl PhaseConfig {
    pub fn teacher() -> Self {
        Self {
            learning_rate: 5e-3,
            paper_learning_rate: 5e-5,
            epochs: 10,
            batch_size: 32,
            paper_batch_size: 128,
        }
    }

    pub fn student() -> Self {
        Self {
            learning_rate: 1e-3,
            paper_learning_rate: 1e-5,
            ..Self::teacher()
        }
    }
}

/// How gradients reach the batch target prototypes inside the alignment
/// term.
/// Adam moment settings shared by both phases; each phase supplies its own
/// learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(&self, learning_rate: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrototypeGradient {
    /// Forward value is the moving average; the gradient flows into the
    /// current batch centroid unscaled.
    StraightThrough,
    /// Differentiate the moving-average expression itself, so the batch
    /// centroid receives `rate` times the gradient.
    Scaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrototypeConfig {
    /// Moving-average weight of the newest centroid.
    pub lambda: f64,
    pub gradient: PrototypeGradient,
    /// Teacher epochs trained on cross-entropy alone before class alignment
    /// starts. The checkpoint is chosen among the epochs after it.
    pub alignment_warmup_epochs: usize,
}

impl Default for PrototypeConfig {
    fn default() -> Self {
        Self {
            lambda: 0.9,
            gradient: PrototypeGradient::StraightThrough,
            alignment_warmup_epochs: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Teacher trained with cross-entropy only.
    pub without_ca: bool,
    /// Student trained with distillation only (`alpha = 1`).
    pub without_st: bool,
    /// Pseudo-labels from prototypes alone (`gamma = 1`).
    pub without_pk: bool,
    /// Fixed `alpha = 0.5` instead of the decaying schedule.
    pub without_cl: bool,
}

/// Input corpora: either generated on the fly or read from CoNLL files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DataConfig {
    pub synthetic: Option<SyntheticSpec>,
    pub source_train: Option<PathBuf>,
    pub source_dev: Option<PathBuf>,
    /// Unlabeled target text.
    pub target_train: Option<PathBuf>,
    /// Unlabeled target evaluation text; its tokens join the vocabulary.
    pub target_test: Option<PathBuf>,
    /// Gold tags for `target_test`, read only by evaluation.
    pub target_test_gold: Option<PathBuf>,
    /// Word vectors in the `prokd-embeddings/1` table format.
    pub embeddings: Option<PathBuf>,
    pub entity_types: Option<Vec<String>>,
    pub source_language: Option<String>,
    pub target_language: Option<String>,
    /// Repair BIO violations instead of rejecting the file.
    pub lenient: bool,
    /// Surface forms whose tag accuracy is reported separately by evaluation.
    /// Generated corpora fill this with their flipped shift tokens.
    pub shift_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub max_seq_len: usize,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub teacher: PhaseConfig,
    pub student: PhaseConfig,
    pub adam: OptimizerConfig,
    pub prototypes: PrototypeConfig,
    pub fusion: FusionConfig,
    pub ablation: Ablation,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            max_seq_len: 64,
            data: DataConfig {
                synthetic: Some(SyntheticSpec::default()),
                ..DataConfig::default()
            },
            encoder: EncoderConfig::default(),
            teacher: PhaseConfig::teacher(),
            student: PhaseConfig::student(),
            adam: OptimizerConfig::default(),
            prototypes: PrototypeConfig::default(),
            fusion: FusionConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        self.encoder.validate()?;
        self.fusion.validate()?;
        for (name, p) in [("teacher", &self.teacher), ("student", &self.student)] {
            if !(p.learning_rate > 0.0 && p.learning_rate.is_finite()) {
                return bad(format!("{name}.learning_rate must be positive"));
            }
            if p.epochs == 0 || p.batch_size == 0 {
                return bad(format!(
                    "{name}.epochs and {name}.batch_size must be positive"
                ));
            }
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive".into());
        }
        let l = self.prototypes.lambda;
        if !(l > 0.0 && l < 1.0) {
            return bad(format!("prototypes.lambda must be in (0, 1), got {l}"));
        }
        if !self.ablation.without_ca
            && self.prototypes.alignment_warmup_epochs >= self.teacher.epochs
        {
            return bad(format!(
                "prototypes.alignment_warmup_epochs ({}) must be below teacher.epochs ({})",
                self.prototypes.alignment_warmup_epochs, self.teacher.epochs
            ));
        }
        let d = &self.data;
        if d.synthetic.is_none()
            && (d.source_train.is_none() || d.source_dev.is_none() || d.target_train.is_none())
        {
            return bad(
                "data needs either [data.synthetic] or source_train, source_dev and target_train"
                    .into(),
            );
        }
        Ok(())
    }

    /// Parses a config, filling every omitted key from [`RunConfig::default`].
    /// Tables merge key by key, except `[data]`: a file that has one replaces
    /// the default data source outright, so naming corpus files never leaves
    /// the synthetic generator switched on.
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let err = |e: &dyn std::fmt::Display| TrainError::Config(e.to_string());
        let user: toml::Table = text.parse().map_err(|e| err(&e))?;
        let toml::Value::Table(mut merged) =
            toml::Value::try_from(Self::default()).expect("config serializes")
        else {
            unreachable!("config serializes to a table")
        };
        for (key, value) in user {
            match (merged.get_mut(&key), value) {
                (Some(toml::Value::Table(base)), toml::Value::Table(over)) if key != "data" => {
                    merge(base, over)
                }
                (_, value) => {
                    merged.insert(key, value);
                }
            }
        }
        let cfg: Self = toml::Value::Table(merged).try_into().map_err(|e| err(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.data
            .resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// The alpha actually applied at `epoch`, honoring ablation overrides.
    pub fn alpha_at(&self, epoch: usize) -> Result<f64, TrainError> {
        if self.ablation.without_st {
            Ok(1.0)
        } else if self.ablation.without_cl {
            Ok(0.5)
        } else {
            Ok(crate::losses::alpha_schedule(epoch, self.student.epochs)?)
        }
    }

    pub fn gamma(&self) -> f64 {
        if self.ablation.without_pk {
            1.0
        } else {
            self.fusion.gamma
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

impl DataConfig {
    /// Makes relative paths relative to the config file's directory.
    pub fn resolve_relative_to(&mut self, base: &Path) {
        for p in [
            &mut self.source_train,
            &mut self.source_dev,
            &mut self.target_train,
            &mut self.target_test,
            &mut self.target_test_gold,
            &mut self.embeddings,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Hyperparameter grid; every combination is trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub lambda: Vec<f64>,
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lambda: vec![0.001, 0.005, 0.0001, 0.0005],
            tau1: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            tau2: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            gamma: vec![0.7, 0.8, 0.9],
        }
    }
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.lambda.len() * self.tau1.len() * self.tau2.len() * self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn configs(&self, base: &RunConfig) -> Vec<RunConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &lambda in &self.lambda {
            for &tau1 in &self.tau1 {
                for &tau2 in &self.tau2 {
                    for &gamma in &self.gamma {
                        let mut c = base.clone();
                        c.prototypes.lambda = lambda;
                        c.fusion.tau1 = tau1;
                        c.fusion.tau2 = tau2;
                        c.fusion.gamma = gamma;
                        out.push(c);
                    }
                }
            }
        }
        out
    }
}
