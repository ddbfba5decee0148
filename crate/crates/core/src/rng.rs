//! Named random streams derived from one root seed.
//!
//! Every randomized component takes its own [`ChaCha8Rng`] built from
//! `(root, label)`, so changing the randomness of one component never shifts
//! the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream named `label` under `root`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(splitmix(root) ^ h)
}

pub fn stream(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label))
}

/// Fresh child seed drawn from a parent stream.
pub fn child_seed(rng: &mut impl rand::RngCore) -> u64 {
    rng.next_u64()
}
