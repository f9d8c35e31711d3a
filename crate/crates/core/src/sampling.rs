//! Seeded subsampling shared by the store and the adversarial evaluator.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default seed for the ID and adversarial sample caps.
pub const DEFAULT_SEED: u64 = 0;
/// Number of in-distribution test samples used for the headline accuracy.
pub const ID_SAMPLE_CAP: usize = 1024;
/// Number of samples attacked for adversarial robustness.
pub const ADV_SAMPLE_CAP: usize = 128;

/// Seeded RNG used throughout the crate.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Indices of a uniform, seed-deterministic subset of `0..n` without
/// replacement, in ascending order. Returns `0..n` when `n <= cap`.
pub fn sample_indices(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if n <= cap {
        return idx;
    }
    let mut rng = rng(seed, 0);
    let (chosen, _) = idx.partial_shuffle(&mut rng, cap);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    chosen
}
