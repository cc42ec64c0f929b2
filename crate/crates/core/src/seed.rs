//! Seed derivation and content digests.
//!
//! Every random stream in a run is derived from one master seed so that a
//! run is reproducible end to end. Streams are separated by fixed offsets
//! and then mixed through SHA-256, so neighbouring master seeds do not
//! produce correlated streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Fixed stream offsets, one per consumer of randomness.
pub mod stream {
    pub const SPLIT: u64 = 0x0100;
    pub const FEW_SHOT: u64 = 0x0200;
    pub const SIM: u64 = 0x0300;
    pub const EXPAND: u64 = 0x0400;
    pub const SELECT: u64 = 0x0500;
    pub const SUBSAMPLE: u64 = 0x0600;
    pub const REPLICATE: u64 = 0x0700;
    pub const BENCH: u64 = 0x0800;
}

/// SHA-256 over length-prefixed parts. Framing keeps `("ab","c")` and
/// `("a","bc")` distinct.
pub fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.finalize().into()
}

pub fn digest_u64(parts: &[&[u8]]) -> u64 {
    let d = digest(parts);
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Maps a 64-bit value onto [0, 1) using its top 53 bits.
pub fn unit_interval(x: u64) -> f64 {
    (x >> 11) as f64 / (1u64 << 53) as f64
}

pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    digest_u64(&[
        &master.to_le_bytes(),
        &stream.to_le_bytes(),
        &index.to_le_bytes(),
    ])
}

pub fn rng_for(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index))
}
