//! Deterministic RNG stream derivation.
//!
//! Every random draw in the crate comes from a ChaCha stream seeded by
//! `(master seed, label, index)`, so results do not depend on evaluation
//! order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h = splitmix(master);
    for b in label.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    splitmix(h ^ splitmix(index))
}

pub fn stream(master: u64, label: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, label, index))
}
