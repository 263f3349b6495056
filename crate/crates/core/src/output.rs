//! Atomic file output: data goes to a temporary sibling that is renamed over
//! the destination once complete.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::Result;

pub struct AtomicWriter {
    inner: BufWriter<File>,
    tmp: PathBuf,
    dest: PathBuf,
}

impl AtomicWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
        Ok(Self { inner: BufWriter::new(File::create(&tmp)?), tmp, dest: path.to_path_buf() })
    }

    /// Flushes and moves the file into place.
    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        self.inner.get_ref().sync_all()?;
        std::fs::rename(&self.tmp, &self.dest)?;
        Ok(())
    }
}

impl Write for AtomicWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.inner.write(buf)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

impl Drop for AtomicWriter {
    fn drop(&mut self) {
        // no-op after a successful rename
        let _ = std::fs::remove_file(&self.tmp);
    }
}

/// Writes `contents` to `path` atomically.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut w = AtomicWriter::create(path)?;
    w.write_all(contents)?;
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replaces_destination_only_on_finish() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        std::fs::write(&path, "old").unwrap();
        let mut w = AtomicWriter::create(&path).unwrap();
        w.write_all(b"new").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "old");
        w.finish().unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "new");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        drop(AtomicWriter::create(&dir.path().join("abandoned.csv")).unwrap());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
