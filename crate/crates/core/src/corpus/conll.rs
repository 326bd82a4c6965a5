//! CoNLL column format: one `token tag` pair per line, blank lines between
//! sentences. Extra middle columns (POS, chunk) are ignored; the tag is the
//! last column. `-DOCSTART-` lines are skipped, which is also where files
//! written here keep their format header.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{
    repair_bio, validate_bio, Corpus, CorpusError, LabelScheme, LabeledCorpus, LabeledSentence,
    Sentence, Split, TagKind, UnlabeledCorpus,
};

pub const HEADER_PREFIX: &str = "-DOCSTART-";
pub const FORMAT_TAG: &str = "prokd-conll/1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConllOptions {
    pub language: String,
    pub split: Split,
    pub max_len: usize,
    /// Rewrite dangling `I-t` to `B-t` instead of failing.
    pub lenient: bool,
}

impl Default for ConllOptions {
    fn default() -> Self {
        Self {
            language: "und".into(),
            split: Split::Train,
            max_len: 64,
            lenient: false,
        }
    }
}

impl ConllOptions {
    pub fn new(language: impl Into<String>, split: Split) -> Self {
        Self {
            language: language.into(),
            split,
            ..Self::default()
        }
    }
}

struct RawSentence {
    tokens: Vec<String>,
    tags: Vec<String>,
    lines: Vec<usize>,
}

/// Reads the header fields written by [`write_conll`], if present.
fn read_header(line: &str, opts: &mut ConllOptions) {
    let mut fields = line.split_whitespace().skip(1);
    if fields.next() != Some(FORMAT_TAG) {
        return;
    }
    for field in fields {
        if let Some(lang) = field.strip_prefix("language=") {
            opts.language = lang.to_string();
        } else if let Some(split) = field.strip_prefix("split=") {
            if let Ok(s) = split.parse() {
                opts.split = s;
            }
        }
    }
}

fn read_raw<R: BufRead>(
    reader: R,
    labeled: bool,
    opts: &mut ConllOptions,
) -> Result<Vec<RawSentence>, CorpusError> {
    let mut out = Vec::new();
    let mut cur = RawSentence {
        tokens: vec![],
        tags: vec![],
        lines: vec![],
    };
    let flush = |cur: &mut RawSentence, out: &mut Vec<RawSentence>| {
        if !cur.tokens.is_empty() {
            out.push(std::mem::replace(
                cur,
                RawSentence {
                    tokens: vec![],
                    tags: vec![],
                    lines: vec![],
                },
            ));
        }
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut cur, &mut out);
            continue;
        }
        if trimmed.starts_with(HEADER_PREFIX) {
            read_header(trimmed, opts);
            flush(&mut cur, &mut out);
            continue;
        }
        let cols: Vec<&str> = trimmed.split_whitespace().collect();
        if labeled && cols.len() < 2 {
            return Err(CorpusError::Malformed {
                line: lineno,
                content: line,
            });
        }
        cur.tokens.push(cols[0].to_string());
        cur.tags.push(cols.last().unwrap().to_string());
        cur.lines.push(lineno);
    }
    flush(&mut cur, &mut out);
    Ok(out)
}

/// Splits at positions `<= max_len`, preferring boundaries that do not cut an
/// entity. A span longer than `max_len` is cut anyway and its continuation
/// starts with `B-t`.
fn split_long(labels: &[usize], max_len: usize, scheme: &LabelScheme) -> Vec<(usize, usize)> {
    let mut chunks = Vec::new();
    let mut start = 0;
    while labels.len() - start > max_len {
        let hard = start + max_len;
        let mut cut = hard;
        while cut > start + 1 && matches!(scheme.kind(labels[cut]), TagKind::Inside(_)) {
            cut -= 1;
        }
        if matches!(scheme.kind(labels[cut]), TagKind::Inside(_)) {
            cut = hard;
        }
        chunks.push((start, cut));
        start = cut;
    }
    chunks.push((start, labels.len()));
    chunks
}

pub fn parse_conll<R: BufRead>(
    reader: R,
    scheme: &LabelScheme,
    options: &ConllOptions,
) -> Result<LabeledCorpus, CorpusError> {
    let mut opts = options.clone();
    let raw = read_raw(reader, true, &mut opts)?;
    let mut sentences = Vec::with_capacity(raw.len());
    for r in raw {
        let mut labels = Vec::with_capacity(r.tags.len());
        for (tag, &line) in r.tags.iter().zip(&r.lines) {
            let idx = scheme
                .index_of(tag)
                .ok_or_else(|| CorpusError::UnknownTag {
                    line,
                    tag: tag.clone(),
                })?;
            labels.push(idx);
        }
        let violations = validate_bio(&labels, scheme);
        if let Some(v) = violations.first() {
            if opts.lenient {
                repair_bio(&mut labels, scheme);
            } else {
                return Err(CorpusError::Bio {
                    line: r.lines[v.position],
                    violation: v.clone(),
                });
            }
        }
        for (a, b) in split_long(&labels, opts.max_len.max(1), scheme) {
            let mut chunk = labels[a..b].to_vec();
            if let TagKind::Inside(t) = scheme.kind(chunk[0]) {
                log::warn!("line {}: entity longer than max length split", r.lines[a]);
                chunk[0] = scheme.begin(t);
            }
            sentences.push(LabeledSentence {
                sentence: Sentence::new(r.tokens[a..b].to_vec(), opts.language.clone()),
                labels: chunk,
            });
        }
    }
    Ok(Corpus {
        language: opts.language,
        split: opts.split,
        sentences,
    })
}

/// Token-only variant: the first column of each line is the token; any
/// further columns are ignored.
pub fn parse_conll_unlabeled<R: BufRead>(
    reader: R,
    options: &ConllOptions,
) -> Result<UnlabeledCorpus, CorpusError> {
    let mut opts = options.clone();
    let raw = read_raw(reader, false, &mut opts)?;
    let max = opts.max_len.max(1);
    let mut sentences = Vec::new();
    for r in raw {
        for chunk in r.tokens.chunks(max) {
            sentences.push(Sentence::new(chunk.to_vec(), opts.language.clone()));
        }
    }
    Ok(Corpus {
        language: opts.language,
        split: opts.split,
        sentences,
    })
}

fn header(language: &str, split: Split, kind: &str) -> String {
    format!("{HEADER_PREFIX} {FORMAT_TAG} language={language} split={split} {kind}")
}

pub fn write_conll<W: Write>(
    corpus: &LabeledCorpus,
    scheme: &LabelScheme,
    mut writer: W,
) -> std::io::Result<()> {
    writeln!(
        writer,
        "{}",
        header(&corpus.language, corpus.split, "labeled")
    )?;
    for s in &corpus.sentences {
        writeln!(writer)?;
        for (tok, &l) in s.sentence.tokens.iter().zip(&s.labels) {
            writeln!(writer, "{tok} {}", scheme.tag(l))?;
        }
    }
    writer.flush()
}

pub fn write_unlabeled<W: Write>(corpus: &UnlabeledCorpus, mut writer: W) -> std::io::Result<()> {
    writeln!(
        writer,
        "{}",
        header(&corpus.language, corpus.split, "unlabeled")
    )?;
    for s in &corpus.sentences {
        writeln!(writer)?;
        for tok in &s.tokens {
            writeln!(writer, "{tok}")?;
        }
    }
    writer.flush()
}

pub fn read_conll_file(
    path: &Path,
    scheme: &LabelScheme,
    options: &ConllOptions,
) -> Result<LabeledCorpus, CorpusError> {
    parse_conll(BufReader::new(File::open(path)?), scheme, options)
}

pub fn read_unlabeled_file(
    path: &Path,
    options: &ConllOptions,
) -> Result<UnlabeledCorpus, CorpusError> {
    parse_conll_unlabeled(BufReader::new(File::open(path)?), options)
}

pub fn write_conll_file(
    corpus: &LabeledCorpus,
    scheme: &LabelScheme,
    path: &Path,
) -> std::io::Result<()> {
    write_conll(corpus, scheme, BufWriter::new(File::create(path)?))
}

pub fn write_unlabeled_file(corpus: &UnlabeledCorpus, path: &Path) -> std::io::Result<()> {
    write_unlabeled(corpus, BufWriter::new(File::create(path)?))
}
