//! Cache lock file: concurrent invocations against the same cache are
//! unsupported, so commands that write the cache take an exclusive lock for
//! their lifetime.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};

pub struct CacheLock {
    path: PathBuf,
}

impl CacheLock {
    pub fn acquire(cache_path: &Path) -> Result<CacheLock> {
        let path = PathBuf::from(format!("{}.lock", cache_path.display()));
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(CacheLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "cache {} is locked by another invocation; remove {} if that run is gone",
                cache_path.display(),
                path.display()
            ),
            Err(e) => bail!("cannot create lock file {}: {e}", path.display()),
        }
    }
}

impl Drop for CacheLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
