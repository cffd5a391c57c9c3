//! Run directories and their manifests.
//!
//! A manifest is written with status `running` before any computation and
//! rewritten with the final status afterwards, so a directory whose manifest
//! still says `running` belongs to an interrupted run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "ATTN_THERMO_OUT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT), PathBuf::from)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "reason")]
pub enum ManifestStatus {
    Running,
    Completed,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub software_version: String,
    /// RFC 3339; absent in reproducible mode.
    pub started_at: Option<String>,
    pub finished_at: Option<String>,
    pub status: ManifestStatus,
}

fn now(reproducible: bool) -> Option<String> {
    (!reproducible).then(|| chrono::Utc::now().to_rfc3339())
}

impl RunManifest {
    pub fn start(command: Vec<String>, config: &impl Serialize, seeds: Vec<u64>, reproducible: bool) -> Result<Self> {
        Ok(Self {
            command,
            config: serde_json::to_value(config)?,
            seeds,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: now(reproducible),
            finished_at: None,
            status: ManifestStatus::Running,
        })
    }

    pub fn finish(&mut self, status: ManifestStatus, reproducible: bool) {
        self.finished_at = now(reproducible);
        self.status = status;
    }

    pub fn is_complete(&self) -> bool {
        self.status != ManifestStatus::Running
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Creates `dir` (and parents).
pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
