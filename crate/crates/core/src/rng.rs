//! Seeded, platform-stable random streams.
//!
//! All sampling draws raw 64-bit words from ChaCha8 (whose output stream is
//! fixed for a given seed) and maps them to ranges with Lemire's
//! multiply-and-reject method, so results never depend on the range
//! algorithms of a particular `rand` release.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Recorded in manifests next to the seed.
pub const PRNG_NAME: &str = "chacha8-lemire-v1";

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform integer in `0..n`. `n` must be non-zero.
pub fn below(rng: &mut Rng, n: u64) -> u64 {
    assert!(n > 0, "empty range");
    let mut m = rng.next_u64() as u128 * n as u128;
    let mut low = m as u64;
    if low < n {
        let threshold = n.wrapping_neg() % n;
        while low < threshold {
            m = rng.next_u64() as u128 * n as u128;
            low = m as u64;
        }
    }
    (m >> 64) as u64
}

/// Uniform float in `[0, 1)` with 53 random bits.
pub fn unit(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
