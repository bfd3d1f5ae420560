//! Seed derivation. Every random stream in the crate is keyed by a tuple of
//! integers so results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of keys into a single 64-bit seed.
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(base), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(base: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, keys))
}

// stream tags, so that e.g. the dataset and the network never share a stream
pub(crate) const TAG_GAUSS: u64 = 0x6761_7573;
pub(crate) const TAG_PROJECT: u64 = 0x7072_6f6a;
pub(crate) const TAG_DICHOTOMY: u64 = 0x6469_6368;
pub(crate) const TAG_DATA: u64 = 0x6461_7461;
pub(crate) const TAG_PERMUTE: u64 = 0x7065_726d;
pub(crate) const TAG_SUBSET: u64 = 0x7375_6273;
pub(crate) const TAG_INIT: u64 = 0x696e_6974;
pub(crate) const TAG_SHUFFLE: u64 = 0x7368_7566;
