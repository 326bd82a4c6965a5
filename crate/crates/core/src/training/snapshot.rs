use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::TrainError;
use crate::corpus::{UnlabeledCorpus, UNK};
use crate::model::NerModel;

const MAGIC: &str = "prokd-snapshot/1";

/// Teacher probability rows for every token of a target corpus, in corpus
/// order. Computed once, before the student starts, and never refreshed.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSnapshot {
    num_tags: usize,
    sentence_lengths: Vec<usize>,
    offsets: Vec<usize>,
    rows: Vec<f64>,
}

/// Above this share of out-of-vocabulary tokens the corpus is taken not to
/// belong to the teacher.
const MAX_UNKNOWN_SHARE: f64 = 0.5;

/// Runs the teacher in inference mode over `corpus`.
pub fn snapshot_teacher(
    teacher: &NerModel,
    corpus: &UnlabeledCorpus,
) -> Result<TeacherSnapshot, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::Snapshot("empty corpus".into()));
    }
    let tokens = corpus.token_count();
    let unknown = corpus
        .sentences
        .iter()
        .flat_map(|s| teacher.vocab().encode(&s.tokens))
        .filter(|&id| id == UNK)
        .count();
    if unknown as f64 > MAX_UNKNOWN_SHARE * tokens as f64 {
        return Err(TrainError::Snapshot(format!(
            "{unknown} of {tokens} tokens are unknown to the teacher vocabulary"
        )));
    }
    let sentences: Vec<&[String]> = corpus
        .sentences
        .iter()
        .map(|s| s.tokens.as_slice())
        .collect();
    let (_, probs) = teacher.infer(&sentences)?;
    TeacherSnapshot::new(
        teacher.scheme().num_tags(),
        corpus.sentences.iter().map(|s| s.len()).collect(),
        probs.into_values(),
    )
}

impl TeacherSnapshot {
    pub fn new(
        num_tags: usize,
        sentence_lengths: Vec<usize>,
        rows: Vec<f64>,
    ) -> Result<Self, TrainError> {
        let tokens: usize = sentence_lengths.iter().sum();
        if num_tags == 0 || rows.len() != tokens * num_tags {
            return Err(TrainError::Snapshot(format!(
                "{} values for {tokens} tokens x {num_tags} tags",
                rows.len()
            )));
        }
        let mut offsets = Vec::with_capacity(sentence_lengths.len());
        let mut acc = 0;
        for &n in &sentence_lengths {
            offsets.push(acc);
            acc += n;
        }
        Ok(Self {
            num_tags,
            sentence_lengths,
            offsets,
            rows,
        })
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    pub fn num_tokens(&self) -> usize {
        self.rows.len() / self.num_tags
    }

    pub fn sentence_lengths(&self) -> &[usize] {
        &self.sentence_lengths
    }

    pub fn row(&self, token: usize) -> &[f64] {
        &self.rows[token * self.num_tags..(token + 1) * self.num_tags]
    }

    /// Rows of one sentence, concatenated.
    pub fn sentence(&self, index: usize) -> &[f64] {
        let start = self.offsets[index] * self.num_tags;
        &self.rows[start..start + self.sentence_lengths[index] * self.num_tags]
    }

    pub fn check_matches(&self, corpus: &UnlabeledCorpus) -> Result<(), TrainError> {
        let same = corpus.len() == self.sentence_lengths.len()
            && corpus
                .sentences
                .iter()
                .zip(&self.sentence_lengths)
                .all(|(s, &n)| s.len() == n);
        if same {
            Ok(())
        } else {
            Err(TrainError::Snapshot(
                "snapshot does not match the corpus layout".into(),
            ))
        }
    }

    /// Header line, then little-endian `u64` token count, tag count,
    /// sentence count and sentence lengths, then the rows as `f64`.
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), TrainError> {
        writeln!(w, "{MAGIC}")?;
        for v in [
            self.num_tokens(),
            self.num_tags,
            self.sentence_lengths.len(),
        ] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for &n in &self.sentence_lengths {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for v in &self.rows {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(mut r: R) -> Result<Self, TrainError> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(TrainError::Snapshot(format!(
                "bad header {:?}",
                line.trim_end()
            )));
        }
        let mut word = || -> Result<[u8; 8], TrainError> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(b)
        };
        let tokens = u64::from_le_bytes(word()?) as usize;
        let tags = u64::from_le_bytes(word()?) as usize;
        let count = u64::from_le_bytes(word()?) as usize;
        let lengths = (0..count)
            .map(|_| Ok(u64::from_le_bytes(word()?) as usize))
            .collect::<Result<Vec<_>, TrainError>>()?;
        if lengths.iter().sum::<usize>() != tokens {
            return Err(TrainError::Snapshot(
                "sentence lengths do not add up".into(),
            ));
        }
        let rows = (0..tokens * tags)
            .map(|_| Ok(f64::from_le_bytes(word()?)))
            .collect::<Result<Vec<_>, TrainError>>()?;
        Self::new(tags, lengths, rows)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
