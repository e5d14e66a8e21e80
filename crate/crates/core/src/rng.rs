//! Seed discipline shared by every stochastic routine.
//!
//! A master seed plus a stream index selects an independent ChaCha stream,
//! so work split across threads reproduces bit-for-bit regardless of
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Returns the generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A cheaper generator for per-trial Monte Carlo inner loops, seeded from
/// `(seed, stream)` through [`derive`].
pub fn fast_stream(seed: u64, stream: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(derive(seed, stream))
}

/// Mixes two words into a derived seed (splitmix64 finalizer).
pub fn derive(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
