//! Run manifest: the configuration echo plus a SHA-256 for every artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult, RunConfig};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub sha256: String,
    pub bytes: u64,
    pub stage: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: Option<RunConfig>,
    /// Keyed by path relative to the output directory.
    pub artifacts: BTreeMap<String, Artifact>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

impl Manifest {
    pub fn load_or_default(dir: &Path) -> CliResult<Self> {
        let path = dir.join(FILE_NAME);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::runtime("manifest", e))?;
        serde_json::from_str(&text).map_err(|e| CliError::runtime("manifest", format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::runtime("manifest", e))?;
        fs::write(dir.join(FILE_NAME), text + "\n").map_err(|e| CliError::runtime("manifest", e))
    }

    /// Hashes `dir/rel` and records it under `stage`, then rewrites the manifest.
    pub fn record(&mut self, dir: &Path, rel: &str, stage: &str) -> CliResult<()> {
        let path = dir.join(rel);
        let sha256 = sha256_file(&path).map_err(|e| CliError::runtime(stage, format!("{}: {e}", path.display())))?;
        let bytes = fs::metadata(&path).map_err(|e| CliError::runtime(stage, e))?.len();
        self.artifacts.insert(
            rel.to_string(),
            Artifact {
                sha256,
                bytes,
                stage: stage.to_string(),
            },
        );
        self.save(dir)
    }

    /// Paths whose current content no longer matches the recorded hash.
    pub fn stale(&self, dir: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|(rel, a)| sha256_file(&dir.join(rel)).map_or(true, |h| h != a.sha256))
            .map(|(rel, _)| rel.clone())
            .collect()
    }
}
