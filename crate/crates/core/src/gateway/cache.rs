//! On-disk completion cache: one file per prompt hash holding the raw
//! response body.

use std::io::Write;
use std::path::{Path, PathBuf};

use super::GatewayError;

#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn open(dir: &Path) -> Result<Self, GatewayError> {
        std::fs::create_dir_all(dir).map_err(|e| GatewayError::cache(dir, e))?;
        Ok(DiskCache {
            dir: dir.to_path_buf(),
        })
    }

    /// Opens an existing cache without creating it.
    pub fn open_existing(dir: &Path) -> Result<Self, GatewayError> {
        if !dir.is_dir() {
            return Err(GatewayError::InvalidConfig(format!(
                "replay needs an existing cache at {}",
                dir.display()
            )));
        }
        Ok(DiskCache {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, hash: &str) -> PathBuf {
        self.dir.join(hash)
    }

    pub fn get(&self, hash: &str) -> Result<Option<String>, GatewayError> {
        let p = self.path(hash);
        match std::fs::read_to_string(&p) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(GatewayError::cache(&p, e)),
        }
    }

    /// Writes through a temporary file in the same directory and renames it
    /// into place, so concurrent readers never see a partial body.
    pub fn put(&self, hash: &str, body: &str) -> Result<(), GatewayError> {
        let target = self.path(hash);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| GatewayError::cache(&self.dir, e))?;
        tmp.write_all(body.as_bytes())
            .map_err(|e| GatewayError::cache(tmp.path(), e))?;
        tmp.persist(&target)
            .map_err(|e| GatewayError::cache(&target, e.error))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let c = DiskCache::open(&dir.path().join("c")).unwrap();
        assert_eq!(c.get("abc").unwrap(), None);
        c.put("abc", "{\"x\":1}").unwrap();
        assert_eq!(c.get("abc").unwrap().as_deref(), Some("{\"x\":1}"));
        c.put("abc", "{\"x\":2}").unwrap();
        assert_eq!(c.get("abc").unwrap().as_deref(), Some("{\"x\":2}"));
    }

    #[test]
    fn replay_requires_existing_dir() {
        let dir = tempfile::tempdir().unwrap();
        assert!(DiskCache::open_existing(&dir.path().join("nope")).is_err());
    }
}
