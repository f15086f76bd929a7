//! Run directories and their manifest.
//!
//! Layout: `<root>/{manifest.json, traces/, checkpoints/, metrics/, plots/}`.
//! The manifest keeps one entry per command; re-running a command replaces
//! its entry.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn traces(&self) -> PathBuf {
        self.root.join("traces")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics")
    }

    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn ensure(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))
    }

    pub fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    pub fn load_manifest(&self) -> Result<Manifest> {
        let path = self.manifest_path();
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| LabError::Internal(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(LabError::io(&path, e)),
        }
    }

    /// Record a finished command: hash its inputs and outputs and replace its
    /// manifest entry.
    pub fn record(&self, rec: Record<'_>) -> Result<ManifestEntry> {
        let mut manifest = self.load_manifest()?;
        let mut inputs: Vec<String> = rec.inputs.iter().map(|p| self.rel(p)).collect();
        inputs.sort();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&rec.config).map_err(LabError::internal)?);
        let mut sorted_inputs: Vec<&PathBuf> = rec.inputs.iter().collect();
        sorted_inputs.sort_by_key(|p| self.rel(p));
        for p in sorted_inputs {
            h.update(self.rel(p).as_bytes());
            h.update([0]);
            h.update(std::fs::read(p).map_err(|e| LabError::io(p, e))?);
        }
        let mut outputs = BTreeMap::new();
        for p in rec.outputs {
            outputs.insert(self.rel(p), file_hash(p)?);
        }
        let entry = ManifestEntry {
            command: rec.command.to_string(),
            config: rec.config,
            seeds: rec.seeds,
            input_hash: format!("{:x}", h.finalize()),
            inputs,
            outputs,
            started: rec.started,
            finished: now(),
        };
        manifest.entries.insert(entry.command.clone(), entry.clone());
        let path = self.manifest_path();
        self.ensure(&self.root)?;
        let text = serde_json::to_string_pretty(&manifest).map_err(LabError::internal)?;
        std::fs::write(&path, text + "\n").map_err(|e| LabError::io(&path, e))?;
        Ok(entry)
    }
}

pub struct Record<'a> {
    pub command: &'a str,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: &'a [PathBuf],
    pub outputs: &'a [PathBuf],
    pub started: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// SHA-256 over the config snapshot and every input file.
    pub input_hash: String,
    pub inputs: Vec<String>,
    /// Relative path to SHA-256 of every file the command wrote.
    pub outputs: BTreeMap<String, String>,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub finished: u64,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn file_hash(p: &Path) -> Result<String> {
    let bytes = std::fs::read(p).map_err(|e| LabError::io(p, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}
