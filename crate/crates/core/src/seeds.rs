//! Named random substreams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEVICE_GEN: &str = "device-gen";
pub const NOISE: &str = "noise";
pub const TRAINING_INIT: &str = "training-init";
pub const DATA_GEN: &str = "data-gen";

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for substream `name` (FNV-1a of the name mixed with the root).
pub fn substream_seed(root: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(root ^ splitmix(h))
}

/// Seed for the `index`-th draw of a substream.
pub fn indexed_seed(seed: u64, index: u64) -> u64 {
    splitmix(seed ^ splitmix(index.wrapping_add(1)))
}

pub fn substream(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(root, name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_differ_and_repeat() {
        assert_ne!(substream_seed(1, NOISE), substream_seed(1, DATA_GEN));
        assert_ne!(substream_seed(1, NOISE), substream_seed(2, NOISE));
        assert_eq!(substream_seed(7, NOISE), substream_seed(7, NOISE));
        assert_ne!(indexed_seed(3, 0), indexed_seed(3, 1));
    }
}
