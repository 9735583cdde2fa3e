//! Stage manifests: enough recorded state to re-run a stage and check its output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::Failure;

/// Resolved arguments of one stage run. Paths are stored as given on the command
/// line, so a replay must start from the same working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case", deny_unknown_fields)]
pub enum StageParams {
    Segment { input: PathBuf, fps: f64, clip_seconds: f64, out: PathBuf },
    Filter { clips: PathBuf, detections: Option<PathBuf>, report: PathBuf, accepted: PathBuf, manifest: PathBuf },
    Samples { clips: PathBuf, landmarks: PathBuf, accepted: PathBuf, out: PathBuf, manifest: PathBuf },
    Eval { pred: PathBuf, out: PathBuf, manifest: PathBuf },
    Synth { spec: Option<PathBuf>, out: PathBuf },
}

impl StageParams {
    pub fn name(&self) -> &'static str {
        match self {
            StageParams::Segment { .. } => "segment",
            StageParams::Filter { .. } => "filter",
            StageParams::Samples { .. } => "samples",
            StageParams::Eval { .. } => "eval",
            StageParams::Synth { .. } => "synth",
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        match self {
            StageParams::Segment { out, .. } | StageParams::Synth { out, .. } => out.join("manifest.json"),
            StageParams::Filter { manifest, .. }
            | StageParams::Samples { manifest, .. }
            | StageParams::Eval { manifest, .. } => manifest.clone(),
        }
    }
}

/// `dir/report.json` -> `dir/report.manifest.json`.
pub fn sibling_manifest(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub params: StageParams,
    /// Full effective configuration of the stage, if it takes one.
    pub config: Option<serde_json::Value>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counts: serde_json::Value,
}

impl Manifest {
    pub fn new(params: StageParams) -> Self {
        Self {
            tool: "navcurate".into(),
            version: navcurate_core::VERSION.into(),
            params,
            config: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            counts: serde_json::Value::Null,
        }
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Failure::parse(path, e))
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.insert(key(path), sha256(bytes));
    }

    /// Writes an output file and records its digest.
    pub fn emit(&mut self, path: &Path, bytes: &[u8]) -> Result<(), Failure> {
        navcurate_core::io::write_bytes(path, bytes)?;
        self.outputs.insert(key(path), sha256(bytes));
        Ok(())
    }

    pub fn write(&self) -> Result<(), Failure> {
        let path = self.params.manifest_path();
        let text = navcurate_core::io::format_report(self)?;
        navcurate_core::io::write_bytes(&path, text.as_bytes())?;
        Ok(())
    }
}

pub fn key(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

pub fn sha256(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Recomputes every recorded input digest; returns the paths that differ.
pub fn stale_inputs(m: &Manifest) -> Result<Vec<String>, Failure> {
    let mut stale = Vec::new();
    for (path, digest) in &m.inputs {
        let p = Path::new(path);
        let bytes = std::fs::read(p).map_err(|e| Failure::io(p, e))?;
        if &sha256(&bytes) != digest {
            stale.push(path.clone());
        }
    }
    Ok(stale)
}
