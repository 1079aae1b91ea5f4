//! Deterministic, counter-based random streams.
//!
//! Every stochastic step derives its generator from a base seed plus a list
//! of integer tags (scene, frame, particle, ...). Streams are independent of
//! evaluation order, so scenes can run on any number of workers and a
//! truncated run reproduces the full run's prefix bit-exactly.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64, used to whiten tag words into key material.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent generator for `(seed, tags...)`.
pub fn derive_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = mix(seed ^ 0x6a09_e667_f3bc_c908);
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        let mut h = state ^ mix(i as u64 + 1);
        for (j, &tag) in tags.iter().enumerate() {
            h = mix(h ^ mix(tag.wrapping_add((j as u64 + 1) << 32)));
        }
        chunk.copy_from_slice(&h.to_le_bytes());
        state = mix(state);
    }
    ChaCha8Rng::from_seed(key)
}
