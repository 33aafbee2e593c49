//! Deterministic, splittable seeding.
//!
//! Every random draw in an experiment comes from a ChaCha8 stream keyed by
//! `(master seed, cell, trial)` with the stream id selecting the role of the
//! draw. Trials are therefore independent of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for. Distinct roles never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamRole {
    Operator = 1,
    Signal = 2,
    Noise = 3,
    PowerStart = 4,
    Auxiliary = 5,
}

/// Identifies one trial of one experiment cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSeed {
    pub master: u64,
    pub cell: u64,
    pub trial: u64,
}

impl TrialSeed {
    pub fn new(master: u64, cell: u64, trial: u64) -> Self {
        Self { master, cell, trial }
    }

    /// A single-instance seed (cell 0, trial 0).
    pub fn single(master: u64) -> Self {
        Self::new(master, 0, 0)
    }

    /// Folds the triple into one 64-bit key.
    pub fn key(&self) -> u64 {
        let mut h = splitmix64(self.master);
        h = splitmix64(h ^ self.cell.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        splitmix64(h ^ self.trial.wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
    }

    pub fn rng(&self, role: StreamRole) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key());
        rng.set_stream(role as u64);
        rng
    }
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
