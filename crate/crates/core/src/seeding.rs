//! Deterministic seed derivation for independent replication streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// SplitMix64 finalizer; a bijection on `u64`.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication stream `r` under master seed `master`:
/// `splitmix64(master + splitmix64(r))`.
///
/// For a fixed master seed this is injective in `r`, so no two
/// replications share a stream.
pub fn stream_seed(master: u64, r: u64) -> u64 {
    splitmix64(master.wrapping_add(splitmix64(r)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 64-bit hash of the canonical JSON form of `value` (object keys sorted),
/// rendered as 16 lowercase hex digits. Stable across platforms.
pub fn config_hash<S: Serialize + ?Sized>(value: &S) -> crate::error::Result<String> {
    let canonical: serde_json::Value = serde_json::to_value(value)?;
    let text = serde_json::to_string(&canonical)?;
    let digest = Sha256::digest(text.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    Ok(format!("{:016x}", u64::from_be_bytes(bytes)))
}
