use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use copytrace::{Error, Result};

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: &'static str,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seed: Option<u64>) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let digest = Sha256::digest(serde_json::to_vec(&config)?);
        Ok(RunManifest {
            command: command.to_owned(),
            config_digest: digest.iter().map(|b| format!("{b:02x}")).collect(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION"),
        })
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) -> &mut Self {
        self.inputs.push(p.into());
        self
    }

    pub fn output(&mut self, p: impl Into<PathBuf>) -> &mut Self {
        self.outputs.push(p.into());
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::from(e).at_path(path))
    }
}

/// `<file>.manifest.json` next to a single-file output.
pub fn beside(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
