//! Per-run bookkeeping: which files a run produced and how long each phase took.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Artifact name to path relative to the run directory.
    pub artifacts: BTreeMap<String, PathBuf>,
    /// Wall-clock seconds per phase.
    pub durations_s: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            seed,
            ..Default::default()
        }
    }

    /// Loads the manifest in `dir` if it belongs to the same configuration,
    /// otherwise starts a fresh one.
    pub fn open(dir: &Path, config_hash: &str, seed: u64) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if path.exists() {
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if m.config_hash == config_hash && m.seed == seed {
                return Ok(m);
            }
            log::info!("{} belongs to another configuration; replacing it", path.display());
        }
        Ok(Self::new(config_hash, seed))
    }

    pub fn record_artifact(&mut self, name: &str, relative: impl Into<PathBuf>) {
        self.artifacts.insert(name.to_string(), relative.into());
    }

    pub fn record_duration(&mut self, phase: &str, seconds: f64) {
        self.durations_s.insert(phase.to_string(), seconds);
    }

    /// Writes the manifest after checking that every artifact exists.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.verify(dir)?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (name, rel) in &self.artifacts {
            if !dir.join(rel).exists() {
                bail!("artifact {name} missing at {}", dir.join(rel).display());
            }
        }
        Ok(())
    }
}
