//! Provenance of every artifact under an output directory.
//!
//! `manifest.json` maps each artifact (path relative to the output root) to
//! the command that wrote it, the content hashes of the inputs it read, the
//! configuration section in force and the tool version.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub command: String,
    pub sha256: String,
    /// Input artifact path → its hash at the time it was read.
    pub inputs: BTreeMap<String, String>,
    pub config: serde_json::Value,
    pub tool_version: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, ArtifactRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    /// Reads `manifest.json` under `root`, or starts an empty one.
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::format(&path, e))
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))
    }

    pub fn record(&mut self, artifact: &str, record: ArtifactRecord) {
        self.artifacts.insert(artifact.to_string(), record);
    }

    /// Checks that every recorded input is itself a recorded artifact and
    /// that no artifact depends on itself, directly or transitively.
    pub fn validate_dag(&self) -> std::result::Result<(), String> {
        for (name, rec) in &self.artifacts {
            for input in rec.inputs.keys() {
                if !self.artifacts.contains_key(input) {
                    return Err(format!("{name} lists input {input}, which no command recorded"));
                }
            }
        }
        // Kahn's algorithm over input edges.
        let mut indegree: BTreeMap<&str, usize> = self.artifacts.iter().map(|(k, r)| (k.as_str(), r.inputs.len())).collect();
        let mut ready: Vec<&str> = indegree.iter().filter(|(_, &d)| d == 0).map(|(k, _)| *k).collect();
        let mut seen = 0;
        while let Some(done) = ready.pop() {
            seen += 1;
            for (name, rec) in &self.artifacts {
                if rec.inputs.contains_key(done) {
                    let d = indegree.get_mut(name.as_str()).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        ready.push(name);
                    }
                }
            }
        }
        if seen != self.artifacts.len() {
            return Err("artifact inputs form a cycle".into());
        }
        Ok(())
    }

    /// Checks recorded hashes against the files on disk.
    pub fn stale_artifacts(&self, root: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|(name, rec)| hash_file(&root.join(name)).map_or(true, |h| h != rec.sha256))
            .map(|(name, _)| name.clone())
            .collect()
    }
}
