//! Fixed-capacity experience store with FIFO eviction and seeded uniform
//! sampling.

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    buf: VecDeque<T>,
    capacity: usize,
    rng: ChaCha8Rng,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            buf: VecDeque::with_capacity(capacity),
            capacity,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Insert one transition, evicting the oldest when full.
    pub fn push(&mut self, item: T) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, idx: usize) -> &T {
        &self.buf[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.buf.iter()
    }

    /// Uniform indices into the filled region, with replacement. Oldest
    /// surviving transition is index 0.
    pub fn sample_indices(&mut self, k: usize) -> Result<Vec<usize>> {
        if self.buf.is_empty() {
            return Err(Error::Config("cannot sample from an empty replay buffer".into()));
        }
        let len = self.buf.len();
        Ok((0..k).map(|_| self.rng.gen_range(0..len)).collect())
    }
}
