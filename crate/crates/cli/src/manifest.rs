use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::error::Result;
use crate::formats::{sibling, write_json};

/// Record of one run, written next to its primary output as
/// `<stem>.manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Every flag after defaults are applied.
    pub parameters: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub version: String,
    pub duration_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, parameters: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            parameters,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            duration_seconds: 0.0,
        }
    }

    /// Writes the manifest beside `primary` and returns its path.
    pub fn write(mut self, primary: &Path, elapsed: Duration) -> Result<PathBuf> {
        self.duration_seconds = elapsed.as_secs_f64();
        let path = sibling(primary, ".manifest.json");
        write_json(&path, &self)?;
        Ok(path)
    }
}
