//! Content digests and per-job seed derivation.

use sha2::{Digest, Sha256};

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Derives an independent 64-bit seed from a master seed and a label path.
///
/// The seed is the first 8 bytes (little-endian) of
/// `SHA-256("<master>/<part0>/<part1>/...")`.
pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    let mut text = master.to_string();
    for p in parts {
        text.push('/');
        text.push_str(p);
    }
    let hash = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(hash[..8].try_into().expect("8 bytes"))
}

/// Digest of an index list, used to prove two fits saw the same rows.
pub fn index_digest(indices: &[usize]) -> String {
    let mut h = Sha256::new();
    for i in indices {
        h.update((*i as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}
