//! Two-stage pipeline: a source-trained teacher with prototype alignment,
//! a frozen snapshot of its target probabilities, and a student distilled on
//! unlabeled target text with prototype-based self-training.

mod config;
mod data;
mod experiment;
mod snapshot;
mod student;
mod teacher;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use config::{
    Ablation, DataConfig, GridSpec, OptimizerConfig, PhaseConfig, PrototypeConfig,
    PrototypeGradient, RunConfig,
};
pub use data::{EvalSet, TrainingData};
pub use experiment::{
    grid_search, run_ablation, run_pipeline, run_resampled_ablation, AblationReport, GridResult,
    GridRow, PipelineOutput, SeedResult, Variant,
};
pub use snapshot::{snapshot_teacher, TeacherSnapshot};
pub use student::distill_student;
pub use teacher::train_teacher;

use crate::corpus::{CorpusError, LabeledCorpus};
use crate::evaluation::{token_f1, EvalError};
use crate::losses::{LossBundle, LossError};
use crate::model::{EncoderConfig, ModelError, NerModel};
use crate::prototypes::{PrototypeError, PrototypeSet};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("losses: {0}")]
    Loss(#[from] LossError),
    #[error("prototypes: {0}")]
    Prototype(#[from] PrototypeError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("diffcore: {0}")]
    Diff(#[from] crate::diffcore::DiffError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl TrainError {
    /// Name of the module the failure originated in.
    pub fn module(&self) -> &'static str {
        match self {
            TrainError::Config(_) | TrainError::Snapshot(_) | TrainError::Io(_) => "training",
            TrainError::Model(_) => "model",
            TrainError::Corpus(_) => "corpus",
            TrainError::Loss(_) => "losses",
            TrainError::Prototype(_) => "prototypes",
            TrainError::Eval(_) => "evaluation",
            TrainError::Diff(_) => "diffcore",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Teacher,
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean of each loss term over the epoch's steps; `batch` holds the
    /// step count.
    pub losses: LossBundle,
    pub source_dev_f1: Option<f64>,
    /// Filled only when an evaluation hook was supplied.
    pub target_f1: Option<f64>,
    pub alpha: Option<f64>,
    pub ca_skipped_steps: usize,
    pub kd_fallback_steps: usize,
    pub prototypes: Vec<PrototypeSet>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub phase: Phase,
    pub learning_rate: f64,
    pub paper_learning_rate: f64,
    pub batch_size: usize,
    pub paper_batch_size: usize,
    pub epochs: Vec<EpochReport>,
    /// Epoch whose model was returned.
    pub selected_epoch: usize,
    pub alpha_trajectory: Vec<f64>,
}

impl TrainReport {
    fn new(phase: Phase, p: &PhaseConfig) -> Self {
        Self {
            phase,
            learning_rate: p.learning_rate,
            paper_learning_rate: p.paper_learning_rate,
            batch_size: p.batch_size,
            paper_batch_size: p.paper_batch_size,
            epochs: Vec::new(),
            selected_epoch: 0,
            alpha_trajectory: Vec::new(),
        }
    }

    pub fn final_epoch(&self) -> Option<&EpochReport> {
        self.epochs.last()
    }
}

/// Optional side channels of a training run. `target_eval` is how target
/// scores reach the report without the loop ever holding target labels.
#[derive(Default)]
pub struct Hooks<'a> {
    pub log: Option<&'a mut dyn Write>,
    pub target_eval: Option<&'a TargetEval>,
}

pub type TargetEval = dyn Fn(&NerModel) -> Result<f64, TrainError>;

impl Hooks<'_> {
    fn record(&mut self, bundle: &LossBundle) -> Result<(), TrainError> {
        if let Some(w) = self.log.as_mut() {
            serde_json::to_writer(&mut **w, bundle).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Derives an independent stream seed from a base seed and a path of tags.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut z = base;
    for &p in path {
        z ^= p
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(z << 6)
            .wrapping_add(z >> 2);
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

pub(crate) const STREAM_TEACHER: u64 = 1;
pub(crate) const STREAM_STUDENT: u64 = 2;

/// A freshly initialized network for one role, with pretrained vectors
/// loaded when available.
pub fn init_model(
    config: &RunConfig,
    data: &TrainingData,
    phase: Phase,
) -> Result<NerModel, TrainError> {
    let stream = match phase {
        Phase::Teacher => STREAM_TEACHER,
        Phase::Student => STREAM_STUDENT,
    };
    let enc = EncoderConfig {
        seed: derive_seed(config.seed, &[stream, 0]),
        ..config.encoder.clone()
    };
    let mut model = NerModel::init(enc, data.vocab.clone(), data.scheme.clone())?;
    if let Some(e) = &data.embeddings {
        let n = model.load_pretrained(e)?;
        log::debug!("{n} of {} embedding rows pretrained", data.vocab.len());
    }
    Ok(model)
}

/// Token F1 of `model` on a labeled corpus.
pub fn labeled_f1(model: &NerModel, corpus: &LabeledCorpus) -> Result<f64, TrainError> {
    let sentences: Vec<&[String]> = corpus
        .sentences
        .iter()
        .map(|s| s.sentence.tokens.as_slice())
        .collect();
    let pred = model.predict(&sentences)?;
    Ok(token_f1(&pred, &corpus.labels(), model.scheme())?.f1)
}

/// Running sums of optional loss terms.
#[derive(Default)]
struct Accumulator {
    steps: usize,
    sums: [f64; 5],
    counts: [usize; 5],
}

impl Accumulator {
    fn add(&mut self, b: &LossBundle) {
        self.steps += 1;
        let terms = [
            b.ce_teacher,
            b.class_alignment,
            b.kd_mse,
            b.self_train_ce,
            Some(b.total),
        ];
        for (i, t) in terms.into_iter().enumerate() {
            if let Some(v) = t {
                self.sums[i] += v;
                self.counts[i] += 1;
            }
        }
    }

    fn mean(&self, template: &LossBundle) -> LossBundle {
        let m = |i: usize| (self.counts[i] > 0).then(|| self.sums[i] / self.counts[i] as f64);
        LossBundle {
            epoch: template.epoch,
            batch: self.steps,
            ce_teacher: m(0),
            class_alignment: m(1),
            kd_mse: m(2),
            self_train_ce: m(3),
            total: m(4).unwrap_or(0.0),
            alpha: template.alpha,
            gamma: template.gamma,
            tau1: template.tau1,
            tau2: template.tau2,
            skipped_labels: Vec::new(),
            fallback_to_kd: false,
        }
    }
}
