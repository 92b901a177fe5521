//! Seedable, splittable random streams.
//!
//! Every Monte Carlo path gets its own ChaCha12 stream: the master seed is
//! expanded with `seed_from_u64` and the path index selects the stream, so
//! path `i` sees the same numbers regardless of how paths are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Generator used for every stochastic routine in the crate.
pub type PathRng = ChaCha12Rng;

/// Identifier recorded in run manifests.
pub const GENERATOR_ID: &str =
    "rand_chacha-0.9 ChaCha12Rng; seed_from_u64(master seed); set_stream(path index)";

/// Independent stream for `(master_seed, stream)`.
pub fn stream_rng(master_seed: u64, stream: u64) -> PathRng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream_rng(7, 0).random();
        let b: u64 = stream_rng(7, 0).random();
        let c: u64 = stream_rng(7, 1).random();
        let d: u64 = stream_rng(8, 0).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
