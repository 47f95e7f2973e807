//! Seed derivation. Every random stream in the crate is a ChaCha8 generator whose
//! seed is derived from a root seed and a tuple of integer tags, so streams can be
//! recreated independently (per scenario, per step, per agent) without sharing state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `tags` into `root`. Order matters: `derive(s, &[1, 2]) != derive(s, &[2, 1])`.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(root), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_from(root: u64, tags: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(root, tags))
}

/// Stream labels, so unrelated consumers of the same root seed never collide.
pub mod stream {
    pub const WORLD: u64 = 0x5752_4c44;
    pub const AGENTS: u64 = 0x4147_4e54;
    pub const TRUTH: u64 = 0x5452_5554;
    pub const ROLLOUT: u64 = 0x524f_4c4c;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const HISTORY: u64 = 0x4849_5354;
    pub const KMEANS: u64 = 0x4b4d_4e53;
    pub const INIT: u64 = 0x494e_4954;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const ORDER: u64 = 0x4f52_4452;
    pub const EVENTS: u64 = 0x4556_4e54;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_streams_are_reproducible_and_distinct() {
        let a: u64 = rng_from(7, &[1, 2]).random();
        let b: u64 = rng_from(7, &[1, 2]).random();
        let c: u64 = rng_from(7, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(derive_seed(7, &[]), derive_seed(8, &[]));
    }
}
