//! Stable content hashes used as join keys and cache keys.

use sha2::{Digest, Sha256};

/// Separator placed between hashed fields (ASCII unit separator).
pub const FIELD_SEP: char = '\u{1f}';

/// Lowercase hex of the first 128 bits of SHA-256 over `fields` joined by
/// [`FIELD_SEP`].
pub fn hash128_hex(fields: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for (i, field) in fields.iter().enumerate() {
        if i > 0 {
            let mut buf = [0u8; 4];
            hasher.update(FIELD_SEP.encode_utf8(&mut buf).as_bytes());
        }
        hasher.update(field.as_bytes());
    }
    let digest = hasher.finalize();
    to_hex(&digest[..16])
}

/// First 64 bits of SHA-256 over `bytes`, as an integer.
pub fn hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
