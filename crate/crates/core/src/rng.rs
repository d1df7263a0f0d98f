//! Counter-based random streams so that step `k` of any loop draws the same
//! numbers whether or not the run was resumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream for `(seed, purpose, step)`.
pub fn step_rng(seed: u64, purpose: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(step);
    rng
}

pub mod purpose {
    pub const AE_PRETRAIN: u64 = 1;
    pub const FIDELITY: u64 = 2;
    pub const SR_TRAIN: u64 = 3;
    pub const PROBE: u64 = 4;
    pub const SEVE: u64 = 5;
}
