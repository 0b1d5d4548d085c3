//! Reproducible random streams.
//!
//! All stochastic code in this crate draws from ChaCha8 streams derived from
//! a 64-bit root seed plus a path of indices (sweep index, trial index, ...).
//! The derivation is a fixed splitmix64 chain, so results are bit-identical
//! across runs and platforms and independent substreams can be handed to
//! parallel workers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent ChaCha8 stream from `(seed, path)`.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = seed;
    let mut mixed = splitmix64(&mut state);
    for &idx in path {
        state ^= idx.wrapping_mul(0xd6e8_feb8_6659_fd93);
        mixed ^= splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    let mut s = mixed;
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
