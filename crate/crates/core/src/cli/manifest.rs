use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Record of one CLI run, written as `manifest.json` next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Option<String>,
    pub inputs: Vec<String>,
    pub output: String,
    pub seed: Option<u64>,
    pub parameters: serde_json::Value,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub tool_version: String,
}

pub(crate) fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(subcommand: &str, output: &Path) -> Self {
        RunManifest {
            subcommand: subcommand.into(),
            config: None,
            inputs: Vec::new(),
            output: output.display().to_string(),
            seed: None,
            parameters: serde_json::Value::Null,
            started_unix: unix_now(),
            finished_unix: 0,
            tool_version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self)? + "\n")
            .map_err(|e| Error::io(&path, e))
    }
}
