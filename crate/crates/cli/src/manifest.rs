use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub model_config: String,
    pub inputs: Option<String>,
    pub out_dir: String,
    pub seed: u64,
    pub overrides: Vec<String>,
    pub timestamp_unix: u64,
    pub version: &'static str,
}

impl RunManifest {
    pub fn new(command: &str, model: &Path, out: &Path, seed: u64) -> Self {
        RunManifest {
            command: command.into(),
            argv: std::env::args().collect(),
            model_config: model.display().to_string(),
            inputs: None,
            out_dir: out.display().to_string(),
            seed,
            overrides: Vec::new(),
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            version: env!("CARGO_PKG_VERSION"),
        }
    }

    pub fn write(&self, out: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
