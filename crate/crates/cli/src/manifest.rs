//! `manifest.json`: what ran, with which inputs, producing which files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sparsebench::digest::sha256_hex;

use crate::error::{CliResult, Classify};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the effective configuration serialized as JSON.
    pub config_digest: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub versions: Versions,
    pub inputs: Vec<FileDigest>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub sparsebench: String,
    pub cli: String,
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn digest_file(path: &Path) -> CliResult<FileDigest> {
    let bytes = fs::read(path).io_ctx(format!("reading {}", path.display()))?;
    Ok(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<FileDigest>,
    started: u64,
}

impl ManifestBuilder {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: u64, inputs: &[&Path]) -> CliResult<Self> {
        let config = serde_json::to_value(config).expect("config serializes");
        let inputs = inputs.iter().map(|p| digest_file(p)).collect::<CliResult<Vec<_>>>()?;
        Ok(ManifestBuilder { command: command.to_string(), config, seed, inputs, started: now_unix() })
    }

    /// Writes `manifest.json` into `out_dir`, listing `outputs` by file name.
    /// An earlier manifest for the same command is compared first and any
    /// changed input is reported.
    pub fn finish(self, out_dir: &Path, outputs: &[PathBuf]) -> CliResult<RunManifest> {
        let path = out_dir.join(MANIFEST_FILE);
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(previous) = serde_json::from_str::<RunManifest>(&text) {
                if previous.command == self.command {
                    for old in &previous.inputs {
                        if let Some(new) = self.inputs.iter().find(|i| i.path == old.path) {
                            if new.sha256 != old.sha256 {
                                log::warn!("input {} changed since the previous run", old.path);
                            }
                        }
                    }
                }
            }
        }
        let outputs = outputs
            .iter()
            .map(|p| {
                let d = digest_file(p)?;
                let name = p.strip_prefix(out_dir).unwrap_or(p).display().to_string();
                Ok(FileDigest { path: name, sha256: d.sha256 })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let config_text = serde_json::to_string(&self.config).expect("json value serializes");
        let manifest = RunManifest {
            command: self.command,
            config_digest: sha256_hex(config_text.as_bytes()),
            config: self.config,
            seed: self.seed,
            versions: Versions {
                sparsebench: sparsebench::VERSION.to_string(),
                cli: env!("CARGO_PKG_VERSION").to_string(),
            },
            inputs: self.inputs,
            started_unix: self.started,
            finished_unix: now_unix(),
            outputs,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).io_ctx(format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}
