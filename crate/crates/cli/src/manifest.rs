use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Writes via a temporary sibling and a rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot rename onto {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one command invocation: what went in, what came out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
    pub timings_secs: BTreeMap<String, f64>,
}

pub struct ManifestBuilder {
    root: PathBuf,
    manifest: RunManifest,
    started: Instant,
    phase: Option<(String, Instant)>,
}

impl ManifestBuilder {
    /// Paths under `root` are recorded relative to it.
    pub fn new(command: &str, config_sha256: String, root: &Path) -> Self {
        ManifestBuilder {
            root: root.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config_sha256,
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                artifacts: Vec::new(),
                timings_secs: BTreeMap::new(),
            },
            started: Instant::now(),
            phase: None,
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.to_string(), value);
    }

    fn rel(&self, path: &Path) -> PathBuf {
        path.strip_prefix(&self.root).unwrap_or(path).to_path_buf()
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(FileDigest {
            path: self.rel(path),
            sha256: file_digest(path)?,
        });
        Ok(())
    }

    pub fn artifact(&mut self, path: &Path) -> Result<()> {
        let sha256 = file_digest(path)?;
        let path = self.rel(path);
        self.manifest.artifacts.retain(|a| a.path != path);
        self.manifest.artifacts.push(FileDigest {
            path,
            sha256,
        });
        Ok(())
    }

    /// Starts timing a named phase, closing the previous one.
    pub fn phase(&mut self, name: &str) {
        self.end_phase();
        self.phase = Some((name.to_string(), Instant::now()));
    }

    fn end_phase(&mut self) {
        if let Some((name, t)) = self.phase.take() {
            self.manifest.timings_secs.insert(name, t.elapsed().as_secs_f64());
        }
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.end_phase();
        self.manifest
            .timings_secs
            .insert("total".into(), self.started.elapsed().as_secs_f64());
        let path = self.root.join("manifests").join(format!("{}.json", self.manifest.command));
        write_atomic(&path, &serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(path)
    }
}

/// Exclusive hold on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let path = dir.join(".salm.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "output directory {} is locked by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("cannot create lock {}", path.display())),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(a);
        DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn manifest_lists_digests() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        fs::write(&f, b"abc").unwrap();
        let mut m = ManifestBuilder::new("test", "cfg".into(), dir.path());
        m.input(&f).unwrap();
        m.artifact(&f).unwrap();
        m.artifact(&f).unwrap();
        m.seed("stage1", 42);
        let path = m.finish().unwrap();
        let back: RunManifest = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
        assert_eq!(back.artifacts.len(), 1);
        assert_eq!(back.artifacts[0].path, PathBuf::from("a.txt"));
        assert_eq!(
            back.inputs[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert!(back.timings_secs.contains_key("total"));
    }
}
