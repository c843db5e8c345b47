use std::fs;
use std::path::{Path, PathBuf};

use a2w::{Error, Result};

/// Output files and directories of one command. Unless [`Outputs::commit`]
/// is called, everything registered is deleted on drop.
pub struct Outputs {
    root: PathBuf,
    created: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new(root: &Path) -> Result<Self> {
        let mut out = Self {
            root: root.to_path_buf(),
            created: Vec::new(),
            committed: false,
        };
        if !root.exists() {
            fs::create_dir_all(root).map_err(|e| io_error(root, e))?;
            out.created.push(root.to_path_buf());
        }
        Ok(out)
    }

    /// Path of `name` under the output root, registered for cleanup.
    pub fn path(&mut self, name: &str) -> PathBuf {
        let p = self.root.join(name);
        self.created.push(p.clone());
        p
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| io_error(&p, e))?;
        Ok(p)
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in self.created.iter().rev() {
            let _ = if p.is_dir() {
                fs::remove_dir_all(p)
            } else {
                fs::remove_file(p)
            };
        }
    }
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
