use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::CorpusError;

/// Seeded per-epoch shuffling of sentence indices into batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    len: usize,
    batch_size: usize,
    seed: u64,
}

/// Mixes the epoch into the base seed so each epoch gets its own permutation.
pub(crate) fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut z = seed
        ^ (epoch as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl BatchPlan {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self, CorpusError> {
        if batch_size == 0 {
            return Err(CorpusError::ZeroBatch);
        }
        if len == 0 {
            return Err(CorpusError::Empty);
        }
        Ok(Self {
            len,
            batch_size,
            seed,
        })
    }

    pub fn num_batches(&self) -> usize {
        self.len.div_ceil(self.batch_size)
    }

    pub fn permutation(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(self.seed, epoch));
        order.shuffle(&mut rng);
        order
    }

    /// Sentence indices of every batch of `epoch`; the last batch may be short.
    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        self.permutation(epoch)
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}
