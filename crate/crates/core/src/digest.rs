//! Stable content hashes for configurations and model manifests.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// SHA-256 over the canonical JSON form of `value`.
///
/// Objects are re-encoded with sorted keys, so the hash does not depend on the
/// order in which fields were written.
pub fn stable_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let text = serde_json::to_string(&v)?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// First 12 hex digits, used in file names and result rows.
pub fn short_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(stable_hash(value)?[..12].to_string())
}
