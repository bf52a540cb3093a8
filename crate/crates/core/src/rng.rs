//! Labeled random substreams derived from a single run seed.
//!
//! Every consumer of randomness asks for its own stream by label (and an
//! optional index such as an epoch number). Streams are independent of the
//! order in which they are requested, so adding a consumer never shifts the
//! draws seen by another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Generator for `(seed, label, index)`.
pub fn substream(seed: u64, label: &str, index: u64) -> Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(label.as_bytes(), FNV_OFFSET).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..32].copy_from_slice(&fnv1a(&index.to_le_bytes(), fnv1a(label.as_bytes(), seed)).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
