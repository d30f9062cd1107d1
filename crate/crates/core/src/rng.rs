//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit seed and positioned on
//! a 64-bit stream id. Key expansion uses `SeedableRng::seed_from_u64`, which is
//! stable across platforms. Monte Carlo replication `r` of an experiment with
//! seed `s` draws its data from stream `(s, 2r)`; tuning splits inside that
//! replication use seed `derive_seed(s, r)` so that no two consumers share a
//! stream and no stream depends on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for stream 0 of `seed`.
pub fn seeded(seed: u64) -> SimRng {
    stream(seed, 0)
}

/// SplitMix64 finalizer applied to `seed ^ index`-style mixing.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
