//! Deterministic RNG streams.
//!
//! Every random draw in the crate flows from a single 64-bit master seed.
//! Tree nodes get splittable streams keyed on their position in the tree
//! (the path of child indices), so realizing the environment lazily in any
//! access order produces identical marks. Replicas get independent streams
//! keyed on a study tag and replica index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit finalizer from SplitMix64. Full avalanche.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 128-bit key identifying a node by its path from the root.
///
/// The root key is fixed; a child's key mixes the parent key with the child
/// index through two interleaved SplitMix64 rounds. 128 bits keep path-key
/// collisions negligible up to the arena cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeKey {
    hi: u64,
    lo: u64,
}

impl NodeKey {
    pub fn root() -> Self {
        NodeKey {
            hi: 0x9e37_79b9_7f4a_7c15,
            lo: 0x2545_f491_4f6c_dd1d,
        }
    }

    /// Key of the `index`-th child (0-based).
    #[inline]
    pub fn child(self, index: u32) -> Self {
        let tag = u64::from(index).wrapping_add(1);
        let lo = mix64(self.lo ^ mix64(tag ^ self.hi));
        let hi = mix64(self.hi ^ mix64(tag.wrapping_mul(0xd134_2543_de82_ef95) ^ lo));
        NodeKey { hi, lo }
    }
}

fn chacha_from(words: [u64; 4]) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    for (i, w) in words.iter().enumerate() {
        seed[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Stream used to realize one node's children (offspring count + marks).
pub fn node_stream(master_seed: u64, key: NodeKey) -> ChaCha8Rng {
    chacha_from([mix64(master_seed ^ 0x5bf0_3635), key.hi, key.lo, 0x6e6f_6465])
}

/// Stream owned by one replica of one study component.
pub fn replica_stream(master_seed: u64, tag: u64, replica: u64) -> ChaCha8Rng {
    chacha_from([
        mix64(master_seed ^ 0x7265_706c),
        mix64(tag),
        mix64(replica.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ tag),
        0x7761_6c6b,
    ])
}

/// Derived 64-bit seed for a sub-component (e.g. per-replica tree seed).
pub fn derive_seed(master_seed: u64, tag: u64, index: u64) -> u64 {
    mix64(master_seed ^ mix64(tag) ^ index.wrapping_mul(0xff51_afd7_ed55_8ccd))
}
