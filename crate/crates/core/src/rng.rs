//! Reproducible random streams.
//!
//! Every stochastic routine derives its generator from `(seed, tag, index)` so
//! that results do not depend on scheduling order when work is split across
//! threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub mod tag {
    pub const CHAIN: u64 = 1;
    pub const SUBJECT_EFFECTS: u64 = 2;
    pub const TRAJECTORY_NOISE: u64 = 3;
    pub const SIM_SUBJECT: u64 = 4;
    pub const SIM_SPLIT: u64 = 5;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for stream `(tag, index)` under a user seed.
pub fn stream(seed: u64, tag: u64, index: u64) -> StreamRng {
    let mut state = seed ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03);
    let _ = splitmix64(&mut state);
    state ^= index.wrapping_mul(0xA24B_AED4_963E_E407);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
