//! Deterministic synthetic bilingual NER corpora.
//!
//! The source language is built from templated sentences over a generated
//! Latin-script vocabulary. The target language reuses the template
//! distribution but every word passes through a letter-substitution cipher
//! into Cyrillic script, it has a few function words of its own, and a table
//! of shift tokens keeps their surface form while following a different
//! majority tag. A matching table of "pretrained" word vectors places each
//! target word near its source counterpart, displaced by a shared language
//! offset, which is the cross-lingual signal a multilingual encoder would
//! otherwise provide.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::epoch_seed;
use super::{
    Corpus, CorpusError, LabelScheme, LabeledCorpus, LabeledSentence, SealedStore, Sentence, Split,
    TagKind, UnlabeledCorpus,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftEntry {
    pub token: String,
    pub source_tag: String,
    pub source_rate: f64,
    pub target_tag: String,
    pub target_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CipherMode {
    Identity,
    Substitution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainedSpec {
    pub dim: usize,
    /// Half-width of the uniform draw for each word-class center.
    pub class_spread: f64,
    /// Half-width of the per-word perturbation around its class center.
    pub token_noise: f64,
    /// Half-width of the uniform draw for the shared target-language offset.
    pub language_shift: f64,
    /// Extra per-word perturbation applied to target words.
    pub target_noise: f64,
}

impl Default for PretrainedSpec {
    fn default() -> Self {
        Self {
            dim: 32,
            class_spread: 1.0,
            token_noise: 0.6,
            language_shift: 3.0,
            target_noise: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub entity_types: Vec<String>,
    pub source_language: String,
    pub target_language: String,
    /// Number of distinct source words (function words plus entity words).
    pub vocab_size: usize,
    pub num_templates: usize,
    pub min_template_len: usize,
    pub max_template_len: usize,
    /// Probability that a template position opens an entity slot.
    pub entity_density: f64,
    /// Probability that an entity slot is preceded by a cue word of its type.
    pub cue_rate: f64,
    pub max_entity_len: usize,
    pub source_train: usize,
    pub source_dev: usize,
    pub source_test: usize,
    pub target_train: usize,
    pub target_test: usize,
    pub cipher: CipherMode,
    pub cipher_seed: u64,
    /// Function words that exist only in the target language.
    pub target_function_words: usize,
    /// Per-sentence probability of inserting a target-only function word.
    pub target_filler_rate: f64,
    pub shift_table: Vec<ShiftEntry>,
    /// Per-sentence probability of carrying one shift-token occurrence.
    pub shift_density: f64,
    pub pretrained: PretrainedSpec,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            entity_types: vec!["PER".into(), "LOC".into(), "ORG".into(), "MISC".into()],
            source_language: "src".into(),
            target_language: "tgt".into(),
            vocab_size: 400,
            num_templates: 30,
            min_template_len: 4,
            max_template_len: 12,
            entity_density: 0.3,
            cue_rate: 0.7,
            max_entity_len: 3,
            source_train: 2000,
            source_dev: 400,
            source_test: 400,
            target_train: 2000,
            target_test: 1000,
            cipher: CipherMode::Substitution,
            cipher_seed: 17,
            target_function_words: 8,
            target_filler_rate: 0.3,
            shift_table: default_shift_table(),
            shift_density: 0.3,
            pretrained: PretrainedSpec::default(),
            seed: 1,
        }
    }
}

/// Three tokens whose majority tag flips between the languages; the first
/// mirrors the 66.67% I-ORG versus 59.73% B-LOC preference shift.
pub fn default_shift_table() -> Vec<ShiftEntry> {
    let entry = |token: &str, s: &str, sr: f64, t: &str, tr: f64| ShiftEntry {
        token: token.into(),
        source_tag: s.into(),
        source_rate: sr,
        target_tag: t.into(),
        target_rate: tr,
    };
    vec![
        entry("kaspen", "I-ORG", 0.67, "B-LOC", 0.60),
        entry("morvel", "B-PER", 0.70, "B-ORG", 0.65),
        entry("tulsar", "B-LOC", 0.70, "B-MISC", 0.65),
    ]
}

/// Word vectors keyed by surface form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainedEmbeddings {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

const EMBEDDINGS_HEADER: &str = "# prokd-embeddings/1";

impl PretrainedEmbeddings {
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{EMBEDDINGS_HEADER} dim={}", self.dim)?;
        for (token, v) in &self.vectors {
            write!(w, "{token}")?;
            for x in v {
                // `{:?}` prints the shortest representation that round-trips.
                write!(w, "\t{x:?}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self, CorpusError> {
        let mut dim = None;
        let mut vectors = BTreeMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.starts_with('#') {
                dim = line
                    .split_whitespace()
                    .find_map(|f| f.strip_prefix("dim="))
                    .and_then(|d| d.parse().ok());
                continue;
            }
            let mut cols = line.split('\t');
            let Some(token) = cols.next().filter(|t| !t.is_empty()) else {
                continue;
            };
            let v: Result<Vec<f64>, _> = cols.map(str::parse).collect();
            let v = v.map_err(|_| CorpusError::Malformed {
                line: i + 1,
                content: line.clone(),
            })?;
            if dim.is_some_and(|d| d != v.len()) {
                return Err(CorpusError::Malformed {
                    line: i + 1,
                    content: format!("expected {} values", dim.unwrap()),
                });
            }
            vectors.insert(token.to_string(), v);
        }
        let dim = dim
            .or_else(|| vectors.values().next().map(Vec::len))
            .unwrap_or(0);
        Ok(Self { dim, vectors })
    }

    pub fn write_file(&self, path: &Path) -> std::io::Result<()> {
        self.write_tsv(BufWriter::new(File::create(path)?))
    }

    pub fn read_file(path: &Path) -> Result<Self, CorpusError> {
        Self::read_tsv(BufReader::new(File::open(path)?))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpora {
    pub scheme: LabelScheme,
    pub source_train: LabeledCorpus,
    pub source_dev: LabeledCorpus,
    pub source_test: LabeledCorpus,
    pub target_train: UnlabeledCorpus,
    pub target_test: UnlabeledCorpus,
    /// Gold labels for `target_train` and `target_test`, evaluation only.
    pub gold: SealedStore,
    pub embeddings: PretrainedEmbeddings,
}

pub const SEALED_TARGET_TRAIN: &str = "target_train";
pub const SEALED_TARGET_TEST: &str = "target_test";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Generic,
    Cue(usize),
    Entity(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum WordClass {
    Generic,
    Cue(usize),
    Entity(usize),
}

struct Lexicon {
    generic: Vec<String>,
    cues: Vec<Vec<String>>,
    entities: Vec<Vec<String>>,
}

const CUES_PER_TYPE: usize = 3;
const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
/// 26 lowercase Cyrillic letters used as the cipher alphabet.
const CYRILLIC: [char; 26] = [
    'а', 'б', 'в', 'г', 'д', 'е', 'ж', 'з', 'и', 'й', 'к', 'л', 'м', 'н', 'о', 'п', 'р', 'с', 'т',
    'у', 'ф', 'х', 'ц', 'ч', 'ш', 'щ',
];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
    }
    if rng.gen_bool(0.5) {
        w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
    }
    w
}

struct Cipher {
    map: Option<[char; 26]>,
}

impl Cipher {
    fn new(mode: CipherMode, seed: u64) -> Self {
        match mode {
            CipherMode::Identity => Self { map: None },
            CipherMode::Substitution => {
                let mut letters = CYRILLIC;
                letters.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                Self { map: Some(letters) }
            }
        }
    }

    fn apply(&self, word: &str) -> String {
        match &self.map {
            None => word.to_string(),
            Some(map) => word
                .chars()
                .map(|c| match c {
                    'a'..='z' => map[(c as u8 - b'a') as usize],
                    other => other,
                })
                .collect(),
        }
    }
}

struct ResolvedShift {
    token: String,
    source: (usize, f64),
    target: (usize, f64),
}

impl ResolvedShift {
    /// `(majority tag, rate, alternative tag)` for one side.
    fn side(&self, target: bool) -> (usize, f64, usize) {
        let (major, rate) = if target { self.target } else { self.source };
        let other = if target { self.source.0 } else { self.target.0 };
        let alt = if other != major {
            other
        } else {
            super::OUTSIDE
        };
        (major, rate, alt)
    }
}

fn validate(spec: &SyntheticSpec, scheme: &LabelScheme) -> Result<Vec<ResolvedShift>, CorpusError> {
    let bad = |msg: String| Err(CorpusError::Synthetic(msg));
    if spec.entity_types.is_empty() {
        return bad("at least one entity type is required".into());
    }
    if spec.min_template_len == 0 || spec.min_template_len > spec.max_template_len {
        return bad("template length range is empty".into());
    }
    if spec.max_entity_len == 0 {
        return bad("max_entity_len must be positive".into());
    }
    if spec.num_templates < spec.entity_types.len() {
        return bad(format!(
            "{} templates cannot cover {} entity types",
            spec.num_templates,
            spec.entity_types.len()
        ));
    }
    for (name, p) in [
        ("entity_density", spec.entity_density),
        ("cue_rate", spec.cue_rate),
        ("target_filler_rate", spec.target_filler_rate),
        ("shift_density", spec.shift_density),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return bad(format!("{name} must be in [0, 1], got {p}"));
        }
    }
    if spec.pretrained.dim == 0 {
        return bad("pretrained.dim must be positive".into());
    }
    let mut shifts = Vec::new();
    let mut seen = HashSet::new();
    for e in &spec.shift_table {
        for rate in [e.source_rate, e.target_rate] {
            if !(rate > 0.0 && rate < 1.0) {
                return bad(format!("shift rate for {:?} must be in (0, 1)", e.token));
            }
        }
        if e.token.is_empty() || e.token.contains(char::is_whitespace) || !seen.insert(&e.token) {
            return bad(format!("invalid or duplicate shift token {:?}", e.token));
        }
        let tag = |t: &str| {
            scheme
                .index_of(t)
                .ok_or_else(|| CorpusError::Synthetic(format!("unknown shift tag {t:?}")))
        };
        shifts.push(ResolvedShift {
            token: e.token.clone(),
            source: (tag(&e.source_tag)?, e.source_rate),
            target: (tag(&e.target_tag)?, e.target_rate),
        });
    }
    Ok(shifts)
}

fn build_lexicon(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Lexicon, CorpusError> {
    let types = spec.entity_types.len();
    let function = (spec.vocab_size / 6).max(CUES_PER_TYPE * types + 4);
    let generic = function - CUES_PER_TYPE * types;
    let entity_total = spec.vocab_size.saturating_sub(function);
    let per_type = entity_total / types;
    if per_type < 2 {
        return Err(CorpusError::Synthetic(format!(
            "vocabulary of {} words is too small for {} entity types and the function-word inventory",
            spec.vocab_size, types
        )));
    }
    let mut used: HashSet<String> = spec.shift_table.iter().map(|e| e.token.clone()).collect();
    let mut fresh = |n: usize, rng: &mut ChaCha8Rng| -> Vec<String> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let w = pseudo_word(rng);
            if used.insert(w.clone()) {
                out.push(w);
            }
        }
        out
    };
    let generic = fresh(generic, rng);
    let cues = (0..types).map(|_| fresh(CUES_PER_TYPE, rng)).collect();
    let entities = (0..types).map(|_| fresh(per_type, rng)).collect();
    Ok(Lexicon {
        generic,
        cues,
        entities,
    })
}

fn entity_len(max: usize, rng: &mut ChaCha8Rng) -> usize {
    let r: f64 = rng.gen();
    let len = if r < 0.5 {
        1
    } else if r < 0.85 {
        2
    } else {
        3
    };
    len.min(max)
}

fn build_templates(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<Slot>> {
    let types = spec.entity_types.len();
    let mut templates = Vec::with_capacity(spec.num_templates);
    for ti in 0..spec.num_templates {
        let target_len = rng.gen_range(spec.min_template_len..=spec.max_template_len);
        let mut slots = Vec::new();
        let mut width = 0;
        // The first templates each guarantee a multi-token span of one type so
        // every B-t and I-t position exists somewhere.
        if ti < types {
            if rng.gen_bool(spec.cue_rate) {
                slots.push(Slot::Cue(ti));
                width += 1;
            }
            let len = spec.max_entity_len.clamp(1, 2);
            slots.push(Slot::Entity(ti, len));
            width += len;
        }
        while width < target_len {
            if rng.gen_bool(spec.entity_density) {
                let t = rng.gen_range(0..types);
                if rng.gen_bool(spec.cue_rate) {
                    slots.push(Slot::Cue(t));
                    width += 1;
                }
                let len = entity_len(spec.max_entity_len, rng);
                slots.push(Slot::Entity(t, len));
                width += len;
            } else {
                slots.push(Slot::Generic);
                width += 1;
            }
        }
        if ti < types {
            // move the forced span to a random position
            let forced: Vec<Slot> = slots
                .drain(
                    ..slots
                        .iter()
                        .position(|s| matches!(s, Slot::Entity(..)))
                        .unwrap()
                        + 1,
                )
                .collect();
            let at = rng.gen_range(0..=slots.len());
            slots.splice(at..at, forced);
        }
        templates.push(slots);
    }
    templates
}

/// Positions `(slot index, offset within slot)` where `tag` can be placed.
fn compatible(template: &[Slot], tag: usize, scheme: &LabelScheme) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, slot) in template.iter().enumerate() {
        match (scheme.kind(tag), *slot) {
            (TagKind::Outside, Slot::Generic) => out.push((i, 0)),
            (TagKind::Begin(t), Slot::Entity(st, _)) if t == st => out.push((i, 0)),
            (TagKind::Inside(t), Slot::Entity(st, len)) if t == st && len >= 2 => {
                out.extend((1..len).map(|k| (i, k)))
            }
            _ => {}
        }
    }
    out
}

struct Realizer<'a> {
    spec: &'a SyntheticSpec,
    scheme: &'a LabelScheme,
    lexicon: &'a Lexicon,
    templates: &'a [Vec<Slot>],
    shifts: &'a [ResolvedShift],
    cipher: &'a Cipher,
    target_fillers: &'a [String],
}

impl Realizer<'_> {
    fn sentence(&self, target: bool, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<usize>) {
        let shift = if !self.shifts.is_empty() && rng.gen_bool(self.spec.shift_density) {
            let s = &self.shifts[rng.gen_range(0..self.shifts.len())];
            let (major, rate, alt) = s.side(target);
            let tag = if rng.gen_bool(rate) { major } else { alt };
            Some((s.token.as_str(), tag))
        } else {
            None
        };
        let (template, placement) = match shift {
            Some((_, tag)) => {
                let options: Vec<(usize, Vec<(usize, usize)>)> = self
                    .templates
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (i, compatible(t, tag, self.scheme)))
                    .filter(|(_, c)| !c.is_empty())
                    .collect();
                let (ti, spots) = &options[rng.gen_range(0..options.len())];
                (
                    &self.templates[*ti],
                    Some(spots[rng.gen_range(0..spots.len())]),
                )
            }
            None => (
                &self.templates[rng.gen_range(0..self.templates.len())],
                None,
            ),
        };
        let pick =
            |pool: &[String], rng: &mut ChaCha8Rng| pool[rng.gen_range(0..pool.len())].clone();
        let mut tokens = Vec::new();
        let mut labels = Vec::new();
        for (si, slot) in template.iter().enumerate() {
            match *slot {
                Slot::Generic => {
                    tokens.push(pick(&self.lexicon.generic, rng));
                    labels.push(super::OUTSIDE);
                }
                Slot::Cue(t) => {
                    tokens.push(pick(&self.lexicon.cues[t], rng));
                    labels.push(super::OUTSIDE);
                }
                Slot::Entity(t, len) => {
                    for k in 0..len {
                        tokens.push(pick(&self.lexicon.entities[t], rng));
                        labels.push(if k == 0 {
                            self.scheme.begin(t)
                        } else {
                            self.scheme.inside(t)
                        });
                    }
                }
            }
            if let (Some((token, _)), Some((ps, offset))) = (shift, placement) {
                if ps == si {
                    let at = tokens.len() - slot_width(slot) + offset;
                    tokens[at] = token.to_string();
                }
            }
        }
        if target {
            let shift_token = shift.map(|(t, _)| t);
            for t in tokens.iter_mut() {
                if Some(t.as_str()) != shift_token {
                    *t = self.cipher.apply(t);
                }
            }
            if !self.target_fillers.is_empty() && rng.gen_bool(self.spec.target_filler_rate) {
                let spots: Vec<usize> = (0..=tokens.len())
                    .filter(|&i| {
                        i == tokens.len()
                            || !matches!(self.scheme.kind(labels[i]), TagKind::Inside(_))
                    })
                    .collect();
                let at = spots[rng.gen_range(0..spots.len())];
                tokens.insert(at, pick(self.target_fillers, rng));
                labels.insert(at, super::OUTSIDE);
            }
        }
        (tokens, labels)
    }

    fn corpus(&self, target: bool, split: Split, n: usize, stream: u64) -> LabeledCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let language = if target {
            &self.spec.target_language
        } else {
            &self.spec.source_language
        };
        let sentences = (0..n)
            .map(|_| {
                let (tokens, labels) = self.sentence(target, &mut rng);
                LabeledSentence {
                    sentence: Sentence::new(tokens, language.clone()),
                    labels,
                }
            })
            .collect();
        Corpus {
            language: language.clone(),
            split,
            sentences,
        }
    }
}

fn slot_width(slot: &Slot) -> usize {
    match slot {
        Slot::Entity(_, len) => *len,
        _ => 1,
    }
}

fn uniform_vec(dim: usize, half_width: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.gen_range(-1.0..1.0) * half_width)
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn build_embeddings(
    spec: &SyntheticSpec,
    lexicon: &Lexicon,
    shifts: &[ResolvedShift],
    scheme: &LabelScheme,
    cipher: &Cipher,
    target_fillers: &[String],
    rng: &mut ChaCha8Rng,
) -> PretrainedEmbeddings {
    let p = &spec.pretrained;
    let types = spec.entity_types.len();
    let mut centers = BTreeMap::new();
    let mut classes = vec![WordClass::Generic];
    classes.extend((0..types).map(WordClass::Cue));
    classes.extend((0..types).map(WordClass::Entity));
    for (i, c) in classes.iter().enumerate() {
        centers.insert(i, (*c, uniform_vec(p.dim, p.class_spread, rng)));
    }
    let center =
        |class: WordClass| -> &Vec<f64> { &centers.values().find(|(c, _)| *c == class).unwrap().1 };
    let offset = uniform_vec(p.dim, p.language_shift, rng);
    let mut vectors = BTreeMap::new();
    let put = |word: &String,
               class: WordClass,
               rng: &mut ChaCha8Rng,
               vectors: &mut BTreeMap<String, Vec<f64>>| {
        let v = add(center(class), &uniform_vec(p.dim, p.token_noise, rng));
        let target = cipher.apply(word);
        if target != *word {
            let tv = add(&add(&v, &offset), &uniform_vec(p.dim, p.target_noise, rng));
            vectors.insert(target, tv);
        }
        vectors.insert(word.clone(), v);
    };
    for w in &lexicon.generic {
        put(w, WordClass::Generic, rng, &mut vectors);
    }
    for (t, pool) in lexicon.cues.iter().enumerate() {
        for w in pool {
            put(w, WordClass::Cue(t), rng, &mut vectors);
        }
    }
    for (t, pool) in lexicon.entities.iter().enumerate() {
        for w in pool {
            put(w, WordClass::Entity(t), rng, &mut vectors);
        }
    }
    for w in target_fillers {
        let v = add(
            &add(center(WordClass::Generic), &offset),
            &uniform_vec(p.dim, p.token_noise, rng),
        );
        vectors.insert(w.clone(), v);
    }
    let class_of = |tag: usize| match scheme.kind(tag) {
        TagKind::Outside => WordClass::Generic,
        TagKind::Begin(t) | TagKind::Inside(t) => WordClass::Entity(t),
    };
    for s in shifts {
        let a = center(class_of(s.source.0));
        let b = center(class_of(s.target.0));
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        vectors.insert(
            s.token.clone(),
            add(&mid, &uniform_vec(p.dim, p.token_noise, rng)),
        );
    }
    PretrainedEmbeddings {
        dim: p.dim,
        vectors,
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpora, CorpusError> {
    let scheme = LabelScheme::new(&spec.entity_types)?;
    let shifts = validate(spec, &scheme)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lexicon = build_lexicon(spec, &mut rng)?;
    let templates = build_templates(spec, &mut rng);
    let cipher = Cipher::new(spec.cipher, spec.cipher_seed);

    let target_fillers: Vec<String> = if spec.cipher == CipherMode::Substitution {
        let mut frng = ChaCha8Rng::seed_from_u64(epoch_seed(spec.cipher_seed, 99));
        let mut seen: HashSet<String> = HashSet::new();
        let mut out = Vec::new();
        while out.len() < spec.target_function_words {
            // Target-only words: Cyrillic forms that are not images of any source word.
            let w = cipher.apply(&format!("{}q", pseudo_word(&mut frng)));
            if seen.insert(w.clone()) {
                out.push(w);
            }
        }
        out
    } else {
        Vec::new()
    };

    for s in &shifts {
        for (tag, _) in [s.source, s.target] {
            if templates
                .iter()
                .all(|t| compatible(t, tag, &scheme).is_empty())
            {
                return Err(CorpusError::Synthetic(format!(
                    "no template has a slot for shift tag {}",
                    scheme.tag(tag)
                )));
            }
        }
    }

    let realizer = Realizer {
        spec,
        scheme: &scheme,
        lexicon: &lexicon,
        templates: &templates,
        shifts: &shifts,
        cipher: &cipher,
        target_fillers: &target_fillers,
    };
    // Target streams share the source seeds under the identity cipher, so the
    // no-shift identity corpus pair is token-for-token identical.
    let target_mix = match spec.cipher {
        CipherMode::Identity => 0,
        CipherMode::Substitution => epoch_seed(spec.cipher_seed, 7),
    };
    let stream = |k: usize| epoch_seed(spec.seed, 1000 + k);
    let source_train = realizer.corpus(false, Split::Train, spec.source_train, stream(0));
    let source_dev = realizer.corpus(false, Split::Dev, spec.source_dev, stream(1));
    let source_test = realizer.corpus(false, Split::Test, spec.source_test, stream(2));
    let target_train = realizer.corpus(
        true,
        Split::Train,
        spec.target_train,
        stream(0) ^ target_mix,
    );
    let target_test = realizer.corpus(true, Split::Test, spec.target_test, stream(2) ^ target_mix);

    let embeddings = build_embeddings(
        spec,
        &lexicon,
        &shifts,
        &scheme,
        &cipher,
        &target_fillers,
        &mut rng,
    );

    let mut gold = SealedStore::new();
    gold.seal(SEALED_TARGET_TRAIN, target_train.labels());
    gold.seal(SEALED_TARGET_TEST, target_test.labels());

    Ok(SyntheticCorpora {
        scheme,
        source_train,
        source_dev,
        source_test,
        target_train: target_train.unlabeled(),
        target_test: target_test.unlabeled(),
        gold,
        embeddings,
    })
}

/// Surface forms of shift tokens whose target majority tag differs from the
/// source majority tag.
pub fn flipped_shift_tokens(spec: &SyntheticSpec) -> Vec<String> {
    spec.shift_table
        .iter()
        .filter(|e| e.source_tag != e.target_tag)
        .map(|e| e.token.clone())
        .collect()
}
