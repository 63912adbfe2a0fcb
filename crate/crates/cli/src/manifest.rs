use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use codi_core::engine::TrainConfig;
use serde::{Deserialize, Serialize};

pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

/// Record written next to every artifact.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub build: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_hash: Option<String>,
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub artifacts: Vec<String>,
    /// Wall-clock seconds per phase.
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
    #[serde(default)]
    pub counters: BTreeMap<String, u64>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            build: option_env!("CODI_BUILD_ID").unwrap_or(BUILD_ID).into(),
            ..Default::default()
        }
    }

    pub fn path_for(artifact: &Path) -> PathBuf {
        sibling(artifact, "manifest.json")
    }

    pub fn write_for(&self, artifact: &Path) -> std::io::Result<PathBuf> {
        let path = Self::path_for(artifact);
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }

    pub fn read_for(artifact: &Path) -> Option<Self> {
        let text = std::fs::read_to_string(Self::path_for(artifact)).ok()?;
        serde_json::from_str(&text).ok()
    }
}

/// `dir/name.ext` → `dir/name.ext.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
