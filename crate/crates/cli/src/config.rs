use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;
use toolkin_core::env::EnvSpec;
use toolkin_core::kinematics::load_chain;
use toolkin_core::rl::AlgoConfig;

/// JSON run configuration. Every section is optional; missing fields take
/// library defaults. `chain` is a path to a chain JSON, relative to the
/// config file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub algo: AlgoConfig,
    pub chain: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(rel) = &cfg.chain {
            let chain_path = path.parent().unwrap_or(Path::new(".")).join(rel);
            let text = std::fs::read_to_string(&chain_path)
                .with_context(|| format!("reading chain config {}", chain_path.display()))?;
            cfg.env.chain =
                load_chain(&text).with_context(|| format!("loading chain config {}", chain_path.display()))?;
        }
        Ok(cfg)
    }
}
