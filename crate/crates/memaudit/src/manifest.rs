//! `manifest.json`: what each stage was run with and what it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    /// Output path relative to the run directory -> SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
    #[serde(default)]
    pub info: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Checks that `stage` ran with `expected_hash` and that its outputs are
    /// unchanged on disk.
    pub fn require(&self, dir: &Path, stage: &'static str, expected_hash: &str) -> Result<&StageRecord> {
        let rec = self.stages.get(stage).ok_or_else(|| Error::MissingArtifact {
            path: dir.join(MANIFEST_FILE),
            stage,
        })?;
        if rec.config_hash != expected_hash {
            return Err(Error::Config(format!(
                "configuration changed since `{stage}` ran in {}; rerun `memaudit {stage}`",
                dir.display()
            )));
        }
        for (rel, hash) in &rec.files {
            let path = dir.join(rel);
            if !path.exists() {
                return Err(Error::MissingArtifact { path, stage });
            }
            if &sha256_file(&path)? != hash {
                return Err(Error::format(
                    path,
                    format!("contents differ from what `{stage}` recorded"),
                ));
            }
        }
        Ok(rec)
    }

    /// True when `stage` is recorded with `hash` and its files verify.
    pub fn is_current(&self, dir: &Path, stage: &'static str, hash: &str) -> bool {
        self.require(dir, stage, hash).is_ok()
    }

    /// Records a stage and drops every stage recorded downstream of it.
    pub fn record(&mut self, stage: &str, downstream: &[&str], rec: StageRecord) {
        for s in downstream {
            self.stages.remove(*s);
        }
        self.stages.insert(stage.to_string(), rec);
    }
}

/// Collects output files of a stage as they are written.
#[derive(Debug)]
pub struct Outputs {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl Outputs {
    pub fn new(root: &Path) -> Self {
        Outputs {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn add(&mut self, rel: &str) -> Result<()> {
        let hash = sha256_file(&self.root.join(rel))?;
        self.files.insert(rel.to_string(), hash);
        Ok(())
    }

    pub fn finish(self, config_hash: String, info: BTreeMap<String, serde_json::Value>) -> StageRecord {
        StageRecord {
            config_hash,
            files: self.files,
            info,
        }
    }
}
