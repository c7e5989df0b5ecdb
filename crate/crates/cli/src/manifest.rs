//! Stage manifests: config hash, seeds and relative artifact paths only, so
//! reruns are byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io, CliError};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub info: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(stage: &str, config_hash: &str) -> Self {
        Self { stage: stage.into(), version: env!("CARGO_PKG_VERSION").into(), config_hash: config_hash.into(), ..Default::default() }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.into(), value);
        self
    }

    pub fn info(&mut self, key: &str, value: impl ToString) {
        self.info.insert(key.into(), value.to_string());
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = toml::to_string(self).map_err(io)?;
        std::fs::write(dir.join("manifest.toml"), text).map_err(io)
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join("manifest.toml");
        let text = std::fs::read_to_string(&path).map_err(|_| CliError::MissingArtifact(path.clone()))?;
        toml::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}
