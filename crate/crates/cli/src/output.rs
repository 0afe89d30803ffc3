//! Atomic multi-file outputs and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data("Io", format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to re-run one stage: its argument vector, working
/// directory, effective configuration and the checksums of what it read and wrote.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub argv: Vec<String>,
    pub working_dir: String,
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: String,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub config: toml::Table,
    /// Stage-specific facts: counts, splits, epochs and the like.
    pub summary: toml::Table,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data("Io", format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::data("Malformed", format!("manifest {}: {e}", path.display())))
    }
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

/// Files written to temporaries next to their targets and moved into place
/// together by [`Staged::commit`]. Dropping without committing leaves no trace.
#[derive(Default)]
pub struct Staged {
    files: Vec<(PathBuf, NamedTempFile, String)>,
}

impl Staged {
    pub fn add(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        let target = absolute(path);
        let dir = target.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).map_err(|e| CliError::data("Io", format!("cannot create {}: {e}", dir.display())))?;
        let mut tmp = NamedTempFile::new_in(&dir).map_err(|e| CliError::data("Io", format!("cannot stage {}: {e}", target.display())))?;
        tmp.write_all(bytes)?;
        tmp.flush()?;
        self.files.push((target, tmp, sha256_hex(bytes)));
        Ok(())
    }

    pub fn records(&self) -> Vec<FileRecord> {
        self.files.iter().map(|(p, _, h)| FileRecord { path: p.display().to_string(), sha256: h.clone() }).collect()
    }

    /// Moves every staged file into place; on failure removes the ones already moved.
    pub fn commit(self) -> Result<(), CliError> {
        let mut done: Vec<PathBuf> = Vec::new();
        for (target, tmp, _) in self.files {
            if let Err(e) = tmp.persist(&target) {
                for p in &done {
                    let _ = std::fs::remove_file(p);
                }
                return Err(CliError::data("Io", format!("cannot write {}: {}", target.display(), e.error)));
            }
            done.push(target);
        }
        Ok(())
    }
}

/// Collects what a stage reads and writes, then commits outputs plus manifest.
pub struct Run {
    pub command: &'static str,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub config: toml::Table,
    pub summary: toml::Table,
    started_at: String,
    inputs: Vec<FileRecord>,
    staged: Staged,
}

impl Run {
    pub fn new(command: &'static str, argv: Vec<String>) -> Self {
        Run {
            command,
            argv,
            seed: None,
            config: toml::Table::new(),
            summary: toml::Table::new(),
            started_at: now(),
            inputs: Vec::new(),
            staged: Staged::default(),
        }
    }

    /// Reads an input file and records its checksum.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::data("Io", format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(FileRecord { path: absolute(path).display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    pub fn record_config<T: Serialize>(&mut self, key: &str, value: &T) {
        if let Ok(toml::Value::Table(t)) = toml::Value::try_from(value) {
            self.config.insert(key.to_string(), toml::Value::Table(t));
        }
    }

    pub fn note(&mut self, key: &str, value: impl Into<toml::Value>) {
        self.summary.insert(key.to_string(), value.into());
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        self.staged.add(path, bytes)
    }

    /// Writes the manifest to `manifest_path` and commits every staged file.
    pub fn finish(mut self, manifest_path: &Path) -> Result<(), CliError> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            argv: self.argv.clone(),
            working_dir: std::env::current_dir().map(|p| p.display().to_string()).unwrap_or_default(),
            seed: self.seed,
            started_at: self.started_at.clone(),
            finished_at: now(),
            inputs: self.inputs.clone(),
            outputs: self.staged.records(),
            config: self.config.clone(),
            summary: self.summary.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| CliError::data("Malformed", format!("cannot encode manifest: {e}")))?;
        self.staged.add(manifest_path, text.as_bytes())?;
        self.staged.commit()
    }
}

fn now() -> String {
    chrono::Local::now().naive_local().format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// `out` with `suffix` appended to its file name, e.g. `model.bin` → `model.bin.manifest.toml`.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    out.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn staged_files_appear_only_on_commit() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("sub/a.txt");
        let mut staged = Staged::default();
        staged.add(&a, b"hello").unwrap();
        assert!(!a.exists());
        staged.commit().unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), b"hello");

        let b = dir.path().join("b.txt");
        let mut dropped = Staged::default();
        dropped.add(&b, b"x").unwrap();
        drop(dropped);
        assert!(!b.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1, "only sub/ remains, no temporaries");
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar(Path::new("out/model.bin"), ".manifest.toml"), PathBuf::from("out/model.bin.manifest.toml"));
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
