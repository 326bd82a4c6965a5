use std::sync::Arc;

use super::{DataConfig, TrainError};
use crate::corpus::synthetic::SEALED_TARGET_TEST;
use crate::corpus::{
    read_conll_file, read_unlabeled_file, ConllOptions, LabelScheme, LabeledCorpus,
    PretrainedEmbeddings, SealedStore, Split, SyntheticCorpora, UnlabeledCorpus, Vocabulary,
};
use crate::evaluation::{surface_accuracy, token_f1, MetricsReport};
use crate::model::NerModel;

/// Everything a training run may see: labeled source text and unlabeled
/// target text. Target gold labels are never part of it.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub scheme: LabelScheme,
    pub vocab: Vocabulary,
    pub embeddings: Option<PretrainedEmbeddings>,
    pub source_train: LabeledCorpus,
    pub source_dev: LabeledCorpus,
    pub target_train: UnlabeledCorpus,
}

/// Target evaluation text with its gold tags behind a [`SealedStore`].
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub corpus: UnlabeledCorpus,
    pub gold: SealedStore,
    pub set: String,
}

fn build_vocab(source: &[&LabeledCorpus], target: &[&UnlabeledCorpus]) -> Vocabulary {
    let mut vocab = Vocabulary::new();
    for c in source {
        for s in &c.sentences {
            for t in &s.sentence.tokens {
                vocab.insert(t);
            }
        }
    }
    for c in target {
        for s in &c.sentences {
            for t in &s.tokens {
                vocab.insert(t);
            }
        }
    }
    vocab
}

impl TrainingData {
    /// Splits generated corpora into what training may see and the sealed
    /// evaluation set. Target test tokens join the vocabulary (text only).
    pub fn from_synthetic(c: &SyntheticCorpora) -> (Self, EvalSet) {
        let vocab = build_vocab(
            &[&c.source_train, &c.source_dev],
            &[&c.target_train, &c.target_test],
        );
        let data = Self {
            scheme: c.scheme.clone(),
            vocab,
            embeddings: Some(c.embeddings.clone()),
            source_train: c.source_train.clone(),
            source_dev: c.source_dev.clone(),
            target_train: c.target_train.clone(),
        };
        let eval = EvalSet {
            corpus: c.target_test.clone(),
            gold: c.gold.clone(),
            set: SEALED_TARGET_TEST.to_string(),
        };
        (data, eval)
    }

    /// Reads the corpora named in `cfg`. Returns the evaluation set when a
    /// target gold file is configured.
    pub fn load(cfg: &DataConfig, max_len: usize) -> Result<(Self, Option<EvalSet>), TrainError> {
        let missing = |what: &str| TrainError::Config(format!("data.{what} is required"));
        let scheme = match &cfg.entity_types {
            Some(types) => LabelScheme::new(types)?,
            None => LabelScheme::conll(),
        };
        let src = cfg.source_language.clone().unwrap_or_else(|| "src".into());
        let tgt = cfg.target_language.clone().unwrap_or_else(|| "tgt".into());
        let opts = |lang: &str, split| ConllOptions {
            max_len,
            lenient: cfg.lenient,
            ..ConllOptions::new(lang, split)
        };
        let source_train = read_conll_file(
            cfg.source_train
                .as_deref()
                .ok_or_else(|| missing("source_train"))?,
            &scheme,
            &opts(&src, Split::Train),
        )?;
        let source_dev = read_conll_file(
            cfg.source_dev
                .as_deref()
                .ok_or_else(|| missing("source_dev"))?,
            &scheme,
            &opts(&src, Split::Dev),
        )?;
        let target_train = read_unlabeled_file(
            cfg.target_train
                .as_deref()
                .ok_or_else(|| missing("target_train"))?,
            &opts(&tgt, Split::Train),
        )?;
        let eval = match &cfg.target_test_gold {
            Some(p) => {
                let gold = read_conll_file(p, &scheme, &opts(&tgt, Split::Test))?;
                let mut store = SealedStore::new();
                store.seal(SEALED_TARGET_TEST, gold.labels());
                Some(EvalSet {
                    corpus: gold.unlabeled(),
                    gold: store,
                    set: SEALED_TARGET_TEST.to_string(),
                })
            }
            None => None,
        };
        let target_test = match (&cfg.target_test, &eval) {
            (Some(p), _) => Some(read_unlabeled_file(p, &opts(&tgt, Split::Test))?),
            (None, Some(e)) => Some(e.corpus.clone()),
            (None, None) => None,
        };
        let mut targets = vec![&target_train];
        targets.extend(target_test.as_ref());
        let vocab = build_vocab(&[&source_train, &source_dev], &targets);
        let embeddings = cfg
            .embeddings
            .as_deref()
            .map(PretrainedEmbeddings::read_file)
            .transpose()?;
        Ok((
            Self {
                scheme,
                vocab,
                embeddings,
                source_train,
                source_dev,
                target_train,
            },
            eval,
        ))
    }
}

impl EvalSet {
    pub fn open_gold(&self, purpose: &str) -> Result<Arc<Vec<Vec<usize>>>, TrainError> {
        Ok(self.gold.open(&self.set, purpose)?)
    }

    pub fn sentences(&self) -> Vec<&[String]> {
        self.corpus
            .sentences
            .iter()
            .map(|s| s.tokens.as_slice())
            .collect()
    }

    /// Scores predicted tags, with per-surface accuracy for `surfaces`.
    pub fn score(
        &self,
        predicted: &[Vec<usize>],
        scheme: &LabelScheme,
        surfaces: &[String],
    ) -> Result<MetricsReport, TrainError> {
        let gold = self.open_gold("evaluate")?;
        let mut report = token_f1(predicted, &gold, scheme)?;
        if !surfaces.is_empty() {
            report.shift_tokens = surface_accuracy(&self.sentences(), predicted, &gold, surfaces)?;
        }
        Ok(report)
    }

    pub fn evaluate(
        &self,
        model: &NerModel,
        surfaces: &[String],
    ) -> Result<MetricsReport, TrainError> {
        let pred = model.predict(&self.sentences())?;
        self.score(&pred, model.scheme(), surfaces)
    }
}
