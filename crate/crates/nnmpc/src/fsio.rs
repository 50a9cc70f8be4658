//! Atomic file writes: output files appear complete or not at all.

use std::fs;
use std::path::Path;

use crate::error::Result;

/// Writes to a sibling temp file, then renames over the target. Rename is
/// atomic on the same filesystem, so readers never observe a half-written
/// file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
