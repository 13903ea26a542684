//! Counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha stream whose key
//! is a hash of the master seed and a path of integer coordinates (permutation
//! index, replication, rho cell, ...). Results therefore do not depend on the
//! order in which parallel workers pick up work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Hashes `master` together with an ordered path of coordinates.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &c| {
        splitmix64(acc ^ splitmix64(c.wrapping_add(GOLDEN)))
    })
}

pub fn stream(master: u64, path: &[u64]) -> StreamRng {
    let key = derive_seed(master, path);
    let mut seed = [0u8; 32];
    for (i, chunk) in seed.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(key ^ (i as u64)).to_le_bytes());
    }
    StreamRng::from_seed(seed)
}
