//! Run manifests: the merged config, the seed, and SHA-256 hashes of every
//! input and output file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ConfigMap;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: ConfigMap,
    pub inputs: Vec<FileHash>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<FileHash, CliError> {
    let bytes = fs::read(path).map_err(pbc_core::PbcError::from)?;
    Ok(FileHash { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
}

/// Collects output files written into one directory.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<FileHash>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|source| CliError::Output { path: dir.display().to_string(), source })?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| CliError::Output { path: path.display().to_string(), source })?;
        self.files.push(FileHash { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(path)
    }

    pub fn finish(
        self,
        command: &str,
        seed: u64,
        config: &ConfigMap,
        inputs: Vec<FileHash>,
    ) -> Result<Manifest, CliError> {
        let manifest = Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config: config.clone(),
            inputs,
            outputs: self.files,
        };
        let mut json = serde_json::to_string_pretty(&manifest).map_err(pbc_core::PbcError::from)?;
        json.push('\n');
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, json).map_err(|source| CliError::Output { path: path.display().to_string(), source })?;
        Ok(manifest)
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("malformed manifest {}: {e}", path.display())))
}

/// Lists recorded outputs whose hash differs from `actual`.
pub fn compare_outputs(expected: &[FileHash], actual: &[FileHash]) -> Vec<String> {
    let mut diffs = Vec::new();
    for e in expected {
        match actual.iter().find(|a| a.path == e.path) {
            Some(a) if a.sha256 == e.sha256 => {}
            Some(_) => diffs.push(format!("{} differs", e.path)),
            None => diffs.push(format!("{} was not produced", e.path)),
        }
    }
    for a in actual {
        if !expected.iter().any(|e| e.path == a.path) {
            diffs.push(format!("{} is new", a.path));
        }
    }
    diffs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn comparison() {
        let f = |p: &str, h: &str| FileHash { path: p.into(), sha256: h.into() };
        assert!(compare_outputs(&[f("a", "1")], &[f("a", "1")]).is_empty());
        assert_eq!(compare_outputs(&[f("a", "1"), f("b", "2")], &[f("a", "0"), f("c", "3")]).len(), 3);
    }
}
