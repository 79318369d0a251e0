//! Reproducible random streams keyed by `(seed, key)`.
//!
//! Each patient (or Monte Carlo chunk) gets its own ChaCha8 stream, so results
//! do not depend on the order in which patients are simulated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a hash.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stream for a patient identifier.
pub fn patient_stream(seed: u64, patient_id: &str) -> ChaCha8Rng {
    keyed_stream(seed, fnv1a(patient_id.as_bytes()))
}

/// Stream for an arbitrary numeric key.
pub fn keyed_stream(seed: u64, key: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng
}
