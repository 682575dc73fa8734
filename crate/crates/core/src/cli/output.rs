//! All-or-nothing output: files are staged in a temporary directory next to
//! the destination and moved into place only once every file is written.

use std::path::{Path, PathBuf};

use tempfile::TempDir;

use crate::Result;

pub struct OutputSet {
    dest: PathBuf,
    staging: TempDir,
    names: Vec<String>,
}

impl OutputSet {
    pub fn new(dest: &Path) -> Result<Self> {
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent)?;
        Ok(Self {
            dest: dest.to_path_buf(),
            staging: tempfile::Builder::new().prefix(".aceformer-staging").tempdir_in(parent)?,
            names: Vec::new(),
        })
    }

    pub fn add(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        std::fs::write(self.staging.path().join(name), contents)?;
        if !self.names.iter().any(|n| n == name) {
            self.names.push(name.to_string());
        }
        Ok(())
    }

    /// Moves every staged file into the destination directory.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dest)?;
        let mut written = Vec::with_capacity(self.names.len());
        for name in &self.names {
            let target = self.dest.join(name);
            std::fs::rename(self.staging.path().join(name), &target)?;
            written.push(target);
        }
        Ok(written)
    }
}

/// Stages a single file and renames it over `path`.
pub fn write_file_atomic(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    std::io::Write::write_all(&mut tmp, contents.as_ref())?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
