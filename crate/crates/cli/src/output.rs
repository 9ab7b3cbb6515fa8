//! Atomic output: files are written into a staging directory inside the
//! output directory and renamed into place only once the command succeeds.

use std::fs;
use std::path::{Path, PathBuf};

pub struct Staging {
    target: PathBuf,
    tmp: PathBuf,
    committed: bool,
}

impl Staging {
    pub fn new(out_dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(out_dir)?;
        let tmp = out_dir.join(format!(".staging-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        Ok(Self { target: out_dir.to_path_buf(), tmp, committed: false })
    }

    pub fn dir(&self) -> &Path {
        &self.tmp
    }

    /// Where to write `name` before commit.
    pub fn path(&self, name: &str) -> PathBuf {
        self.tmp.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> std::io::Result<()> {
        fs::write(self.path(name), contents)
    }

    /// Moves every staged entry into the output directory, replacing
    /// entries of the same name.
    pub fn commit(mut self) -> std::io::Result<Vec<PathBuf>> {
        let mut moved = Vec::new();
        let mut entries: Vec<_> = fs::read_dir(&self.tmp)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let dst = self.target.join(e.file_name());
            if dst.is_dir() {
                fs::remove_dir_all(&dst)?;
            }
            fs::rename(e.path(), &dst)?;
            moved.push(dst);
        }
        fs::remove_dir(&self.tmp)?;
        self.committed = true;
        Ok(moved)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}
