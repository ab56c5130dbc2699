//! Atomic file writes.
//!
//! Output files are written to a sibling temporary path and renamed into
//! place, so readers never observe a half-written corpus, checkpoint or
//! archive.

use std::fs;
use std::io;
use std::path::Path;

/// Writes `bytes` to `path` atomically.
///
/// The temporary file lives in the same directory as the target so the
/// final rename stays on one filesystem. Parent directories are created
/// as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp = dir.join(file_name);
    let mut ext = tmp.extension().unwrap_or_default().to_os_string();
    if !ext.is_empty() {
        ext.push(".");
    }
    ext.push("tmp");
    tmp.set_extension(ext);
    fs::write(&tmp, bytes)?;
    match fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}
