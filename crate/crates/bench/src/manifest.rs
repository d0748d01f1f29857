//! Replay manifest written next to every run's outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub run_seed: u64,
    /// Every component seed after mixing in the run seed.
    pub seeds: BTreeMap<String, u64>,
    pub formats: BTreeMap<String, u32>,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, config: &C, run_seed: u64) -> Result<Self> {
        let value = serde_json::to_value(config)?;
        let canonical = serde_json::to_vec(&value)?;
        let mut formats = BTreeMap::new();
        formats.insert("checkpoint".to_string(), draftlab::checkpoint::SFMD_VERSION);
        formats.insert("sparse_logits".to_string(), draftlab::train::sparse::SFKD_VERSION);
        Ok(Self {
            tool: "draftlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_sha256: sha256_hex(&canonical),
            config: value,
            run_seed,
            seeds: BTreeMap::new(),
            formats,
            outputs: Vec::new(),
        })
    }

    /// Records a written file by its path relative to `root`.
    pub fn add_output(&mut self, root: &Path, file: &Path) -> Result<()> {
        let bytes = std::fs::read(file)?;
        let rel = file.strip_prefix(root).unwrap_or(file);
        self.outputs.push(OutputFile {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}
