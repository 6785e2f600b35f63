//! Content hashes for configs and artifacts.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the compact JSON encoding of `value`. Struct fields serialize in
/// declaration order and maps are ordered, so equal values hash equally.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("config serializes"))
}
