use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use eiu_core::{Error, Result};
use serde::Serialize;

use crate::settings::Settings;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to repeat a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config: Settings,
    pub seeds: Vec<u64>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub output_dir: PathBuf,
    pub tool_version: String,
    pub started_unix_ms: u128,
    pub dry_run: bool,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: Settings, seeds: Vec<u64>, out: &Path, dry_run: bool) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            argv: std::env::args().collect(),
            config,
            seeds,
            inputs: BTreeMap::new(),
            output_dir: out.to_path_buf(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis()),
            dry_run,
        }
    }

    pub fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.to_string(), path.to_path_buf());
        self
    }

    pub fn write(&self) -> Result<()> {
        fs::create_dir_all(&self.output_dir).map_err(|e| Error::io(&self.output_dir, e))?;
        let path = self.output_dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}
