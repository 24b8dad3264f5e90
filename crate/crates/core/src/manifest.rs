//! Run manifests: what was run, on which inputs, with which seed.
//!
//! Two runs with equal manifests (ignoring the timestamp) produce
//! byte-identical outputs.

use crate::error::{CoherenceError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the canonical JSON of the effective configuration.
    pub config_hash: String,
    pub master_seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub tool_version: String,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` wins when set.
    pub timestamp: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path)
        .map_err(|e| CoherenceError::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, master_seed: u64) -> Result<Self> {
        let canonical = serde_json::to_vec(config)
            .map_err(|e| CoherenceError::Internal(format!("config serialization failed: {e}")))?;
        Ok(Self {
            command: command.to_string(),
            config_hash: sha256_hex(&canonical),
            master_seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: timestamp(),
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(digest_file(path)?);
        Ok(())
    }

    /// Equal in everything that determines the outputs.
    pub fn same_run(&self, other: &Self) -> bool {
        self.command == other.command
            && self.config_hash == other.config_hash
            && self.master_seed == other.master_seed
            && self.inputs == other.inputs
            && self.tool_version == other.tool_version
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CoherenceError::Internal(format!("manifest serialization failed: {e}")))?;
        std::fs::write(path, text + "\n")
            .map_err(|e| CoherenceError::InvalidArgument(format!("cannot write {}: {e}", path.display())))
    }
}
