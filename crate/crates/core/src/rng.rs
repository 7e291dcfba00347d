//! Named random streams derived from one master seed.
//!
//! Each stream seed is the first eight bytes of
//! `SHA-256(master_seed_le ‖ name)`, so adding a new stream or drawing more
//! numbers from one stream never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub const SPLIT: &str = "split";
pub const INIT: &str = "init";
pub const NOISE: &str = "noise";
pub const KMEANS: &str = "kmeans";
pub const TOPICS: &str = "topics";
pub const SYNTH: &str = "synth";

pub fn derive_seed(master: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn stream(master: u64, name: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, name))
}
