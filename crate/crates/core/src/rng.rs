//! Counter-based random substreams.
//!
//! Every consumer derives its generator from `(seed, domain, index)`, so the
//! draws seen by path `i` never depend on how work is scheduled across
//! threads.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

/// Domains keep independent uses of the same seed apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Paths = 0,
    Particles = 1,
    Bootstrap = 2,
    Misc = 3,
}

/// Generator for `(seed, domain, index)`; the stream id packs the domain in
/// the top byte.
pub fn substream(seed: u64, domain: Domain, index: u64) -> StreamRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 56) ^ index);
    rng
}

/// Seed for a nested consumer (e.g. the particle filter run on path `index`).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = substream(7, Domain::Paths, 3).random();
        let b: u64 = substream(7, Domain::Paths, 3).random();
        let c: u64 = substream(7, Domain::Paths, 4).random();
        let d: u64 = substream(7, Domain::Particles, 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
