use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::run::Verdict;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Written next to the outputs of every run, successful or not.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    /// SHA-256 of the config with defaults filled in, output path excluded.
    pub config_hash: String,
    pub code_version: String,
    pub wall_time_secs: f64,
    /// The config as parsed, every default explicit.
    pub config: ExperimentConfig,
    pub parameters: Value,
    pub summary: Value,
    pub verdicts: Vec<Verdict>,
    /// Every other file in the run directory.
    pub files: Vec<FileEntry>,
    #[serde(default)]
    pub error: Option<String>,
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output = None;
    hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serialises")))
}

pub fn file_entry(name: &str, contents: &[u8]) -> FileEntry {
    FileEntry { name: name.into(), sha256: hex::encode(Sha256::digest(contents)), bytes: contents.len() }
}

pub fn load(dir: &Path) -> std::io::Result<RunManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST))?;
    serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
