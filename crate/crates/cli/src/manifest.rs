//! Text manifests that tie every output file to its inputs by content hash.
//!
//! A manifest lists the files a command wrote with their SHA-256, the hash of
//! the configuration that produced them, and a link to the manifest of the
//! command whose outputs it consumed. Checking a manifest re-hashes the files.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use csi_mtl::models::ArchSpec;
use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub data_sha256: String,
    pub parent: Option<Link>,
    pub arch: Option<ArchSpec>,
    /// Free-form facts such as normalization constants or split hashes.
    pub facts: BTreeMap<String, String>,
    /// Output file (relative path) to SHA-256.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config_sha256: String, data_sha256: String) -> Self {
        Manifest {
            command: command.into(),
            seed,
            config_sha256,
            data_sha256,
            parent: None,
            arch: None,
            facts: BTreeMap::new(),
            files: BTreeMap::new(),
        }
    }

    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest")
    }

    /// Hashes `dir/rel` and records it.
    pub fn add_file(&mut self, dir: &Path, rel: &str) -> Result<()> {
        let hash = hash_file(&dir.join(rel))?;
        self.files.insert(rel.to_string(), hash);
        Ok(())
    }

    pub fn fact(&mut self, key: &str, value: impl ToString) {
        self.facts.insert(key.to_string(), value.to_string());
    }

    pub fn get_fact(&self, key: &str) -> Result<&str> {
        self.facts
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CliError::Integrity(format!("{} manifest lacks `{key}`", self.command)))
    }

    pub fn write(&self, dir: &Path) -> Result<Link> {
        let rel = Self::file_name(&self.command);
        let text = toml::to_string(self).expect("manifest serializes");
        write_file(&dir.join(&rel), text.as_bytes())?;
        Ok(Link {
            path: rel,
            sha256: sha256_hex(text.as_bytes()),
        })
    }

    /// Reads `dir/<command>.manifest` and re-hashes every file it lists.
    pub fn read_verified(dir: &Path, command: &str) -> Result<(Manifest, Link)> {
        let rel = Self::file_name(command);
        let path = dir.join(&rel);
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                CliError::Integrity(format!("{} is missing; run `{command}` first", path.display()))
            }
            _ => CliError::io(&path, e),
        })?;
        let m: Manifest =
            toml::from_str(&text).map_err(|e| CliError::Integrity(format!("{}: {e}", path.display())))?;
        if m.command != command {
            return Err(CliError::Integrity(format!("{} belongs to `{}`", path.display(), m.command)));
        }
        for (file, expected) in &m.files {
            let got = hash_file(&dir.join(file))?;
            if &got != expected {
                return Err(CliError::Integrity(format!(
                    "{file} changed after `{command}` wrote it (hash {got}, manifest {expected})"
                )));
            }
        }
        let link = Link {
            path: rel,
            sha256: sha256_hex(text.as_bytes()),
        };
        Ok((m, link))
    }

    /// Fails unless this manifest's parent is exactly `parent`.
    pub fn check_parent(&self, parent: &Link) -> Result<()> {
        if self.parent.as_ref() != Some(parent) {
            return Err(CliError::Integrity(format!(
                "{} was produced from a different {}; rerun `{}`",
                Self::file_name(&self.command),
                parent.path,
                self.command
            )));
        }
        Ok(())
    }
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Integrity(format!("{} is missing", path.display())),
        _ => CliError::io(path, e),
    })?;
    Ok(sha256_hex(&bytes))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub const NAME: &'static str = ".csi-mtl.lock";

    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(Self::NAME);
        let mut f: File = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                CliError::Locked {
                    dir: dir.to_path_buf(),
                    lock: path.clone(),
                }
            } else {
                CliError::io(&path, e)
            }
        })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(DirLock { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        write_file(&dir.path().join("a.bin"), b"abc").unwrap();
        let mut m = Manifest::new("generate", 1, "c".into(), "d".into());
        m.add_file(dir.path(), "a.bin").unwrap();
        m.fact("norm.offset", -1.5);
        let link = m.write(dir.path()).unwrap();
        let (back, again) = Manifest::read_verified(dir.path(), "generate").unwrap();
        assert_eq!((back, again), (m, link));
        write_file(&dir.path().join("a.bin"), b"abd").unwrap();
        let err = Manifest::read_verified(dir.path(), "generate").unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(DirLock::acquire(dir.path()), Err(CliError::Locked { .. })));
        drop(lock);
        DirLock::acquire(dir.path()).unwrap();
    }
}
