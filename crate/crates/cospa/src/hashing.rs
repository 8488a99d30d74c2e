use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &std::path::Path) -> crate::error::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}
