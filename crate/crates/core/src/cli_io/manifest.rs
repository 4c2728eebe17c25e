use super::config::RunConfig;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// Build identifier: `QSSM_VERSION` at compile time when set (e.g. the
/// output of `git describe`), otherwise `v` plus the package version.
pub fn version_string() -> String {
    option_env!("QSSM_VERSION")
        .map(str::to_string)
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Record of a finished run. Its `config` table is a fully resolved
/// [`RunConfig`], so the manifest can itself be passed as `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub artifacts: Vec<PathBuf>,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
