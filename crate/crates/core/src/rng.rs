//! Seeded, splittable random streams.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream keyed by
//! `(seed, stream id)`, so results do not depend on draw order between
//! consumers or on thread layout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids reserved by this crate.
pub mod stream {
    pub const POSITION_NOISE: u64 = 1;
    pub const FORCE_NOISE: u64 = 2;
    pub const FOURIER_PHASES: u64 = 3;
    /// Filtered-noise trajectories use `TRAJECTORY_AXIS + axis`.
    pub const TRAJECTORY_AXIS: u64 = 0x100;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}
