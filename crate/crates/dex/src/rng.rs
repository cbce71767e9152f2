//! Deterministic stream derivation.
//!
//! Every random draw in the crate comes from a ChaCha stream derived from a
//! master seed plus a list of tags (epoch index, replication index, domain
//! id, ...). Streams derived from the same (seed, tags) are bit-identical
//! across runs and platforms, which is what makes training resumable and
//! the Monte-Carlo checks replayable.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step, used only to mix tags into a seed.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent ChaCha stream from a master seed and a tag path.
pub fn derive_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x6c62_272e_07bb_0142;
    let mut mixed = splitmix64(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0x1000_0000_01b3);
        mixed ^= splitmix64(&mut state);
    }
    ChaCha8Rng::seed_from_u64(mixed)
}
