use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn code_version() -> String {
    format!("ticketlab {}", env!("CARGO_PKG_VERSION"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Digest of the config and every prerequisite artifact the stage read.
    pub input_key: String,
    pub artifacts: Vec<Artifact>,
    pub wall_clock_secs: f64,
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub code_version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(config_digest: &str) -> Self {
        RunManifest {
            config_digest: config_digest.to_string(),
            code_version: code_version(),
            stages: BTreeMap::new(),
        }
    }

    /// The manifest in `dir`, or a fresh one if it is missing or belongs to another config.
    pub fn load_or_new(dir: &Path, config_digest: &str) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(config_digest));
        }
        let bytes = fs::read(&path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        let m: RunManifest =
            serde_json::from_slice(&bytes).map_err(|e| ticketlab::Error::Format(format!("{}: {e}", path.display())))?;
        if m.config_digest != config_digest || m.code_version != code_version() {
            return Ok(Self::new(config_digest));
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self).map_err(|e| ticketlab::Error::Format(e.to_string()))?;
        bytes.push(b'\n');
        write_atomic(&dir.join(MANIFEST_FILE), &bytes)
    }

    /// Every artifact of every stage, keyed by path.
    pub fn artifact_digests(&self) -> BTreeMap<String, String> {
        self.stages
            .values()
            .flat_map(|s| s.artifacts.iter().map(|a| (a.path.clone(), a.sha256.clone())))
            .collect()
    }
}

/// Write to a sibling temp file, flush it to disk, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let io = |e| CliError::io(format!("writing {}", path.display()), e);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io)
}
