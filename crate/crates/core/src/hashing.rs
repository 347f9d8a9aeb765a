//! SHA-256 digests used to chain artifacts together.

use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut h = Sha256::new();
    let mut f = File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Digest of several files, in the given order, each prefixed by its name.
pub fn sha256_files(paths: &[&Path]) -> io::Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        h.update(p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        h.update([0]);
        h.update(sha256_file(p)?);
    }
    Ok(hex::encode(h.finalize()))
}
