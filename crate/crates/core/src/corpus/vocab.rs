use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Tokens;

/// Reserved padding row used to complete context windows at sentence edges.
pub const PAD: usize = 0;
/// Reserved row for out-of-vocabulary tokens.
pub const UNK: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token table shared by both languages; indices are stable in insertion
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from(vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()])
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Union of the tokens of every sentence, in first-seen order.
    pub fn build<'a, S: Tokens + 'a>(corpora: impl IntoIterator<Item = &'a [S]>) -> Self {
        let mut vocab = Self::new();
        for sentences in corpora {
            for s in sentences {
                for t in s.tokens() {
                    vocab.insert(t);
                }
            }
        }
        vocab
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}
