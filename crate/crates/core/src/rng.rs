//! Deterministic seed splitting.
//!
//! Every random stream in the crate is derived from a root seed, a purpose
//! tag and an index: `stream(root, "demand", rep)`. The tag is hashed with
//! FNV-1a and the three words are folded through SplitMix64, so streams for
//! distinct `(tag, index)` pairs never share state and no global RNG exists.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(tag: &str) -> u64 {
    tag.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the 64-bit sub-seed for `(root, tag, index)`.
pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    let a = splitmix(root);
    let b = splitmix(a ^ fnv1a(tag));
    splitmix(b ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// A ChaCha8 stream for `(root, tag, index)`.
pub fn stream(root: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tag, index))
}
