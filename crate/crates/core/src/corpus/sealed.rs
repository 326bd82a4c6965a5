use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::CorpusError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRecord {
    pub set: String,
    pub purpose: String,
}

/// Gold label sets withheld from training. Every read goes through
/// [`SealedStore::open`] and is appended to a shared access log, so a test
/// harness can prove that a code path never touched them.
#[derive(Debug, Clone, Default)]
pub struct SealedStore {
    sets: BTreeMap<String, Arc<Vec<Vec<usize>>>>,
    log: Arc<Mutex<Vec<AccessRecord>>>,
}

impl SealedStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn seal(&mut self, name: impl Into<String>, labels: Vec<Vec<usize>>) {
        self.sets.insert(name.into(), Arc::new(labels));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.sets.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sets.keys().map(String::as_str)
    }

    pub fn open(&self, name: &str, purpose: &str) -> Result<Arc<Vec<Vec<usize>>>, CorpusError> {
        let set = self
            .sets
            .get(name)
            .ok_or_else(|| CorpusError::UnknownSealed(name.to_string()))?;
        self.log
            .lock()
            .expect("access log poisoned")
            .push(AccessRecord {
                set: name.to_string(),
                purpose: purpose.to_string(),
            });
        Ok(Arc::clone(set))
    }

    pub fn access_log(&self) -> Vec<AccessRecord> {
        self.log.lock().expect("access log poisoned").clone()
    }
}
