//! Config files: TOML (or JSON by extension) with optional `[train]`,
//! `[model]` and `[synth]` sections. Command-line flags override file values.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use weaklearn_core::data::SynthConfig;
use weaklearn_core::model::ModelConfig;
use weaklearn_core::trainer::TrainConfig;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub train: Option<TrainConfig>,
    pub model: Option<ModelConfig>,
    pub synth: Option<SynthConfig>,
}

pub fn load(path: &Path) -> Result<FileConfig> {
    if !path.is_file() {
        return Err(anyhow!("config not found: {}", path.display()));
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?
    } else {
        toml::from_str(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?
    };
    Ok(parsed)
}

pub fn load_opt(path: Option<&Path>) -> Result<FileConfig> {
    path.map_or_else(|| Ok(FileConfig::default()), load)
}

/// Replaces `slot` when the flag was given.
pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}
