//! Deterministic RNG substreams.
//!
//! Every Monte Carlo routine derives its generator from a user-visible
//! 64-bit seed plus a purpose tag and an index, so that (a) reruns with the
//! same seed are bit-identical regardless of thread count, and (b) distinct
//! stages (boundary nodes, value estimates, validation passes) never share
//! a stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keeping the streams of different stages disjoint.
pub mod tag {
    pub const SOLVE_NODE: u64 = 1;
    pub const VALUE: u64 = 2;
    pub const RESIDUAL: u64 = 3;
    pub const POLICY: u64 = 4;
    pub const IDENTITY_PSI: u64 = 5;
    pub const THETA: u64 = 7;
    pub const SOLVE_POLISH: u64 = 8;
}

/// splitmix64 finalizer; full-period bijective mixer.
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(tag)) ^ index)
}

/// ChaCha stream for one path of one batch. The path index selects the
/// ChaCha stream, so paths are independent of scheduling order.
pub fn path_rng(batch_seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(batch_seed);
    rng.set_stream(path);
    rng
}
