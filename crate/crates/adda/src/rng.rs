//! Seeded, stream-split random number generation.
//!
//! Every source of randomness in a run is a [`RngStream`] identified by
//! `(seed, stream id)`. Streams with the same seed but different ids are
//! statistically independent and each is bit-reproducible, which is what
//! makes virtual-mode runs exactly replayable and lets a sequential
//! reference implementation reproduce a distributed run draw for draw.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Stream id used by the manager's posterior-parameter draws.
pub const MANAGER_STREAM: u64 = 0;
/// Stream id used by the manager's synchronization coin flips.
pub const COIN_STREAM: u64 = 1 << 32;

/// Stream id for worker `worker`'s latent-variable draws (`worker` is
/// zero-based; stream ids start at 1 so the manager keeps stream 0).
pub fn worker_stream(worker: usize) -> u64 {
    1 + worker as u64
}

/// Stream id for worker `worker`'s completion-delay draws.
pub fn delay_stream(worker: usize) -> u64 {
    COIN_STREAM + 1 + worker as u64
}

/// A counter-based generator pinned to one `(seed, stream)` pair.
///
/// Wraps ChaCha12 with its 64-bit stream field, so up to 2^64 independent
/// streams share one seed. The wrapper implements [`RngCore`] and therefore
/// works with any `rand_distr` distribution.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha12Rng,
    seed: u64,
    stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { rng, seed, stream }
    }

    /// Stream for the manager's parameter-block draws.
    pub fn manager(seed: u64) -> Self {
        Self::new(seed, MANAGER_STREAM)
    }

    /// Stream for worker `worker`'s latent-variable draws.
    pub fn worker(seed: u64, worker: usize) -> Self {
        Self::new(seed, worker_stream(worker))
    }

    /// Stream for the per-iteration synchronization coin.
    pub fn coin(seed: u64) -> Self {
        Self::new(seed, COIN_STREAM)
    }

    /// Stream for worker `worker`'s simulated completion delays.
    pub fn delay(seed: u64, worker: usize) -> Self {
        Self::new(seed, delay_stream(worker))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}
