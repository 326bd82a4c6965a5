//! Sentences, BIO label schemes, CoNLL ingestion, batching, and the
//! synthetic bilingual corpus generator.

mod batch;
mod conll;
mod scheme;
mod sealed;
pub mod synthetic;
mod vocab;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use batch::BatchPlan;
pub use conll::{
    parse_conll, parse_conll_unlabeled, read_conll_file, read_unlabeled_file, write_conll,
    write_conll_file, write_unlabeled, write_unlabeled_file, ConllOptions,
};
pub use scheme::{repair_bio, validate_bio, BioViolation, LabelScheme, TagKind, OUTSIDE};
pub use sealed::{AccessRecord, SealedStore};
pub use synthetic::{
    flipped_shift_tokens, generate_synthetic, CipherMode, PretrainedEmbeddings, PretrainedSpec,
    ShiftEntry, SyntheticCorpora, SyntheticSpec, SEALED_TARGET_TEST, SEALED_TARGET_TRAIN,
};
pub use vocab::{Vocabulary, PAD, UNK};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: unknown tag {tag:?}")]
    UnknownTag { line: usize, tag: String },
    #[error("line {line}: expected \"token tag\", got {content:?}")]
    Malformed { line: usize, content: String },
    #[error("line {line}: BIO violation: {violation}")]
    Bio {
        line: usize,
        violation: BioViolation,
    },
    #[error("invalid label scheme: {0}")]
    Scheme(String),
    #[error("empty corpus")]
    Empty,
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("invalid synthetic spec: {0}")]
    Synthetic(String),
    #[error("sealed store has no label set named {0:?}")]
    UnknownSealed(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(CorpusError::Synthetic(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub language: String,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, language: impl Into<String>) -> Self {
        Self {
            tokens,
            language: language.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub sentence: Sentence,
    pub labels: Vec<usize>,
}

/// Anything that carries a token sequence.
pub trait Tokens {
    fn tokens(&self) -> &[String];
}

impl Tokens for Sentence {
    fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl Tokens for LabeledSentence {
    fn tokens(&self) -> &[String] {
        &self.sentence.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus<S> {
    pub language: String,
    pub split: Split,
    pub sentences: Vec<S>,
}

pub type LabeledCorpus = Corpus<LabeledSentence>;
pub type UnlabeledCorpus = Corpus<Sentence>;

impl<S: Tokens> Corpus<S> {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens().len()).sum()
    }
}

impl LabeledCorpus {
    /// Drops the labels.
    pub fn unlabeled(&self) -> UnlabeledCorpus {
        Corpus {
            language: self.language.clone(),
            split: self.split,
            sentences: self.sentences.iter().map(|s| s.sentence.clone()).collect(),
        }
    }

    pub fn labels(&self) -> Vec<Vec<usize>> {
        self.sentences.iter().map(|s| s.labels.clone()).collect()
    }

    pub fn entity_count(&self, scheme: &LabelScheme) -> usize {
        self.sentences
            .iter()
            .map(|s| scheme.count_entities(&s.labels))
            .sum()
    }

    pub fn stats(&self, scheme: &LabelScheme) -> CorpusStats {
        CorpusStats {
            language: self.language.clone(),
            split: self.split,
            sentences: self.len(),
            tokens: self.token_count(),
            entities: self.entity_count(scheme),
        }
    }

    /// Reattaches labels to an unlabeled corpus.
    pub fn from_parts(
        corpus: &UnlabeledCorpus,
        labels: &[Vec<usize>],
    ) -> Result<Self, CorpusError> {
        if corpus.len() != labels.len() {
            return Err(CorpusError::Synthetic(format!(
                "{} sentences but {} label rows",
                corpus.len(),
                labels.len()
            )));
        }
        let mut sentences = Vec::with_capacity(corpus.len());
        for (s, l) in corpus.sentences.iter().zip(labels) {
            if s.len() != l.len() {
                return Err(CorpusError::Synthetic(
                    "sentence/label length mismatch".into(),
                ));
            }
            sentences.push(LabeledSentence {
                sentence: s.clone(),
                labels: l.clone(),
            });
        }
        Ok(Corpus {
            language: corpus.language.clone(),
            split: corpus.split,
            sentences,
        })
    }
}

/// Per-corpus counts in the layout of a dataset statistics table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub language: String,
    pub split: Split,
    pub sentences: usize,
    pub tokens: usize,
    pub entities: usize,
}
