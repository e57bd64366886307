//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit [`RandomStream`]. Parallel
//! work derives one stream per task from `(master seed, task index)`, so the
//! result does not depend on how tasks are scheduled.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RandomStream {
    inner: ChaCha8Rng,
}

impl RandomStream {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream number `task` under `master`.
    pub fn derive(master: u64, task: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master);
        inner.set_stream(task);
        Self { inner }
    }

    /// Draws a fresh master seed from this stream, for handing to parallel
    /// sub-tasks via [`RandomStream::derive`].
    pub fn fork_seed(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
