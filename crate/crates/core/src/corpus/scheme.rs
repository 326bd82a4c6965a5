use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Position of a tag within an entity span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagKind {
    Outside,
    Begin(usize),
    Inside(usize),
}

/// The BIO tag set: `O` at index 0, then `B-t`, `I-t` for each entity type in
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelScheme {
    entity_types: Vec<String>,
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

pub const OUTSIDE: usize = 0;

impl LabelScheme {
    pub fn new<S: AsRef<str>>(entity_types: &[S]) -> Result<Self, CorpusError> {
        let mut types: Vec<String> = Vec::with_capacity(entity_types.len());
        for t in entity_types {
            let t = t.as_ref();
            if t.is_empty() || t.contains(char::is_whitespace) || t == "O" {
                return Err(CorpusError::Scheme(format!("invalid entity type {t:?}")));
            }
            if types.iter().any(|x| x == t) {
                return Err(CorpusError::Scheme(format!("duplicate entity type {t:?}")));
            }
            types.push(t.to_string());
        }
        let mut tags = vec!["O".to_string()];
        for t in &types {
            tags.push(format!("B-{t}"));
            tags.push(format!("I-{t}"));
        }
        let index = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self {
            entity_types: types,
            tags,
            index,
        })
    }

    /// PER, LOC, ORG, MISC.
    pub fn conll() -> Self {
        Self::new(&["PER", "LOC", "ORG", "MISC"]).expect("valid default scheme")
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn tag(&self, index: usize) -> &str {
        &self.tags[index]
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn begin(&self, entity_type: usize) -> usize {
        1 + 2 * entity_type
    }

    pub fn inside(&self, entity_type: usize) -> usize {
        2 + 2 * entity_type
    }

    pub fn kind(&self, index: usize) -> TagKind {
        match index {
            0 => TagKind::Outside,
            i if i % 2 == 1 => TagKind::Begin((i - 1) / 2),
            i => TagKind::Inside((i - 2) / 2),
        }
    }

    /// Number of entity spans (each `B-t`, plus any `I-t` that does not
    /// continue a span of the same type).
    pub fn count_entities(&self, labels: &[usize]) -> usize {
        let mut count = 0;
        let mut prev: Option<usize> = None;
        for &l in labels {
            match self.kind(l) {
                TagKind::Outside => prev = None,
                TagKind::Begin(t) => {
                    count += 1;
                    prev = Some(t);
                }
                TagKind::Inside(t) => {
                    if prev != Some(t) {
                        count += 1;
                    }
                    prev = Some(t);
                }
            }
        }
        count
    }
}

impl Default for LabelScheme {
    fn default() -> Self {
        Self::conll()
    }
}

impl TryFrom<Vec<String>> for LabelScheme {
    type Error = CorpusError;

    fn try_from(types: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(&types)
    }
}

impl From<LabelScheme> for Vec<String> {
    fn from(s: LabelScheme) -> Self {
        s.entity_types
    }
}

/// One BIO inconsistency: an `I-t` that neither follows `B-t` nor `I-t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BioViolation {
    pub position: usize,
    pub tag: String,
    pub previous: Option<String>,
}

impl fmt::Display for BioViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.previous {
            Some(p) => write!(f, "{} after {} at position {}", self.tag, p, self.position),
            None => write!(
                f,
                "{} at sentence start (position {})",
                self.tag, self.position
            ),
        }
    }
}

pub fn validate_bio(labels: &[usize], scheme: &LabelScheme) -> Vec<BioViolation> {
    let mut out = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if let TagKind::Inside(t) = scheme.kind(l) {
            let ok = i > 0
                && matches!(scheme.kind(labels[i - 1]), TagKind::Begin(p) | TagKind::Inside(p) if p == t);
            if !ok {
                out.push(BioViolation {
                    position: i,
                    tag: scheme.tag(l).to_string(),
                    previous: (i > 0).then(|| scheme.tag(labels[i - 1]).to_string()),
                });
            }
        }
    }
    out
}

/// Rewrites every dangling `I-t` to `B-t`.
pub fn repair_bio(labels: &mut [usize], scheme: &LabelScheme) -> usize {
    let mut fixed = 0;
    for v in validate_bio(labels, scheme) {
        if let TagKind::Inside(t) = scheme.kind(labels[v.position]) {
            labels[v.position] = scheme.begin(t);
            fixed += 1;
        }
    }
    fixed
}
