//! The per-run record written next to every command's outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// Some sweep cells or realizations failed; the rest were written.
    Partial,
    /// Aborted by a numerical failure; outputs, if any, are incomplete.
    Failed,
}

/// Everything needed to re-execute a run: the command, the fully resolved
/// configuration (seed overrides applied) and the artifact version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: ExperimentConfig,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub duration_secs: f64,
    pub status: Status,
    pub error: Option<String>,
    /// Headline numbers of the run.
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(dir.join(MANIFEST_FILE), text)
    }
}
