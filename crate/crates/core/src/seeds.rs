use sha2::{Digest, Sha256};

/// Derives an independent named sub-seed from a root seed.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes([d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7]])
}

/// Stable per-item seed, e.g. from a snippet id.
pub fn item_seed(root: u64, id: &str) -> u64 {
    derive_seed(root, &format!("item/{id}"))
}
