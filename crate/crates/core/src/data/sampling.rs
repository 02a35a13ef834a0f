//! Seeded training-pair sampling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Owns the random stream that defines the canonical pair order; the same
/// seed replays the same stream bit-for-bit.
pub struct PairSampler {
    rng: ChaCha8Rng,
}

impl PairSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniformly random ordered (moving, fixed) pair of distinct indices.
    pub fn sample_pair(&mut self, n: usize) -> Result<(usize, usize)> {
        if n < 2 {
            return Err(Error::Contract(format!(
                "pair sampling needs at least 2 entries, got {n}"
            )));
        }
        let a = self.rng.gen_range(0..n);
        let mut b = self.rng.gen_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        Ok((a, b))
    }

    /// Fresh random partition into disjoint ordered pairs (n/2 pairs; a
    /// trailing unpaired entry is dropped).
    pub fn epoch_pairs(&mut self, n: usize) -> Result<Vec<(usize, usize)>> {
        if n < 2 {
            return Err(Error::Contract(format!(
                "pair sampling needs at least 2 entries, got {n}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        Ok(order.chunks_exact(2).map(|c| (c[0], c[1])).collect())
    }

    /// Random permutation of `0..n` (case order within an epoch).
    pub fn epoch_order(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        order
    }
}
