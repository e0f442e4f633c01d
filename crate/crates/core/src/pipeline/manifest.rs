use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifiers::MODEL_FORMAT_VERSION;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// One stage's provenance: what it read, what it wrote and how long it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_sha256: String,
    /// Input role (or run-relative path) to checksum.
    pub inputs: BTreeMap<String, String>,
    /// Run-relative output path to checksum.
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub model_format_version: u32,
    /// Full resolved config of the latest stage, as TOML.
    pub config: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(config: String) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            model_format_version: MODEL_FORMAT_VERSION,
            config,
            stages: BTreeMap::new(),
        }
    }

    pub fn load(run_dir: &Path) -> Result<Option<Self>> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::load(path.display().to_string(), e.to_string()))
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Outputs whose file is missing or whose checksum no longer matches.
    pub fn verify(&self, run_dir: &Path) -> Vec<String> {
        let mut bad = Vec::new();
        for (stage, rec) in &self.stages {
            for (rel, sum) in &rec.outputs {
                match sha256_file(&run_dir.join(rel)) {
                    Ok(s) if &s == sum => {}
                    _ => bad.push(format!("{stage}: {rel}")),
                }
            }
        }
        bad
    }
}
