use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{M3vError, Result};

/// Writes `bytes` to a temp file next to `path` and renames it into place, so
/// readers never observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| M3vError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| M3vError::io(path, e))?;
    tmp.flush().map_err(|e| M3vError::io(path, e))?;
    tmp.persist(path).map_err(|e| M3vError::io(path, e.error))?;
    Ok(())
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
