//! Run manifests: what ran, on which scenario, and content hashes of every
//! output written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scenario::Scenario;
use crate::{io_err, Result};

pub const TOOL: &str = "vecbern";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Absent when the scenario itself failed to load.
    pub scenario: Option<Scenario>,
    /// Input files by name (not path) and hash.
    pub inputs: Vec<OutputRecord>,
    pub status: String,
    pub errors: Vec<String>,
    pub outputs: Vec<OutputRecord>,
    /// Wall-clock seconds per stage; only recorded on request since they
    /// break byte-identical reruns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects the files a command wrote and writes `manifest_<command>.json`.
pub struct ManifestWriter {
    dir: PathBuf,
    manifest: RunManifest,
}

impl ManifestWriter {
    pub fn new(dir: &Path, command: &str, scenario: Option<&Scenario>, timings: bool) -> Self {
        Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                tool: TOOL.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                seed: scenario.map_or(0, |s| s.seed),
                scenario: scenario.cloned(),
                inputs: Vec::new(),
                status: "ok".into(),
                errors: Vec::new(),
                outputs: Vec::new(),
                timings: timings.then(BTreeMap::new),
            },
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes `bytes` to `rel` under the run directory and records its hash.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.record(rel)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Records a file some other routine already wrote.
    pub fn record(&mut self, rel: &str) -> Result<()> {
        let path = self.dir.join(rel);
        let sha256 = sha256_file(&path)?;
        let bytes = fs::metadata(&path).map_err(io_err(&path))?.len();
        self.manifest.outputs.retain(|o| o.path != rel);
        self.manifest.outputs.push(OutputRecord {
            path: rel.into(),
            sha256,
            bytes,
        });
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        let bytes = fs::metadata(path).map_err(io_err(path))?.len();
        let name = path
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        self.manifest.inputs.push(OutputRecord {
            path: name,
            sha256,
            bytes,
        });
        Ok(())
    }

    pub fn error(&mut self, message: impl Into<String>) {
        let m = message.into();
        log::error!("{m}");
        self.manifest.errors.push(m);
    }

    pub fn fail(&mut self) {
        self.manifest.status = "failed".into();
    }

    pub fn time(&mut self, stage: &str, seconds: f64) {
        if let Some(t) = &mut self.manifest.timings {
            t.insert(stage.into(), seconds);
        }
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Writes the manifest; called on success and on failure alike.
    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let path = self.dir.join(format!("manifest_{}.json", self.manifest.command));
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(self.manifest)
    }
}

/// Re-hashes every output of a manifest; returns the paths that differ.
pub fn verify(dir: &Path, manifest: &RunManifest) -> Result<Vec<String>> {
    let mut bad = Vec::new();
    for o in &manifest.outputs {
        let p = dir.join(&o.path);
        if !p.exists() || sha256_file(&p)? != o.sha256 {
            bad.push(o.path.clone());
        }
    }
    Ok(bad)
}
