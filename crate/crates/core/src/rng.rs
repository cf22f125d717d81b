//! Seed derivation and counter-based random streams.
//!
//! Every random quantity is keyed by `(seed, index)` so results do not depend
//! on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for item `index` of a run keyed by `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix(mix(master ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(mix(index.wrapping_add(1))))
}

/// Independent ChaCha stream number `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
