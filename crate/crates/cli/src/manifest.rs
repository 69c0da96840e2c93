//! Run manifests and the output directory layout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, PathContext};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINTS_DIR: &str = "checkpoints";
pub const PREDICTIONS_DIR: &str = "predictions";
pub const REPORTS_DIR: &str = "reports";

/// Record of one command run, written as `manifest.json` in the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    /// SHA-256 of every input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every output file, keyed by its path inside the output directory.
    pub outputs: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub duration_seconds: f64,
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of a file's content.
pub fn file_digest(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&fs::read(path).at(path)?))
}

/// An output directory being filled by one command.
pub struct RunDir {
    root: PathBuf,
    command: String,
    started: Instant,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl RunDir {
    /// Create the directory with its fixed subdirectories.
    pub fn create(root: &Path, command: &str) -> Result<Self, CliError> {
        for sub in [CHECKPOINTS_DIR, PREDICTIONS_DIR, REPORTS_DIR] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).at(&dir)?;
        }
        Ok(RunDir {
            root: root.to_path_buf(),
            command: command.to_string(),
            started: Instant::now(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Hash an input file into the manifest.
    pub fn record_input(&mut self, path: &Path) -> Result<(), CliError> {
        let digest = file_digest(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Write an output file at `relative` and hash it into the manifest.
    pub fn write(&mut self, relative: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(relative);
        fs::write(&path, bytes).at(&path)?;
        self.outputs.insert(relative.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    /// Write pretty JSON with a trailing newline.
    pub fn write_json<T: Serialize>(&mut self, relative: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(relative, &bytes)
    }

    /// Write the manifest and consume the directory.
    pub fn finish<C: Serialize>(self, config: &C, seeds: Vec<u64>) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config)?,
            inputs: self.inputs,
            outputs: self.outputs,
            seeds,
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.root.join(MANIFEST_FILE);
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).at(&path)?;
        Ok(manifest)
    }
}

/// Read a manifest back.
pub fn read_manifest(dir: &Path) -> Result<RunManifest, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).at(&path)?;
    serde_json::from_slice(&bytes).at(&path)
}
