//! Settings file: top-level keys overlay the pipeline defaults, an optional `[synthetic]`
//! table overlays the generator defaults. Flags override both.

use std::path::Path;

use coldstart_core::dataset::SyntheticConfig;
use coldstart_core::pipeline::PipelineConfig;
use coldstart_core::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub space: Option<String>,
    pub top_k: Option<usize>,
}

fn invalid(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("{}: {reason}", path.display()))
}

/// Rejects top-level keys the target type does not have.
fn check_keys<T: serde::Serialize>(path: &Path, table: &toml::Table, defaults: &T, what: &str) -> Result<()> {
    let known = toml::Value::try_from(defaults).map_err(|e| invalid(path, e))?;
    let known = known.as_table().expect("struct serializes to a table");
    if let Some(k) = table.keys().find(|k| !known.contains_key(*k)) {
        return Err(invalid(path, format!("unknown {what} setting `{k}`")));
    }
    Ok(())
}

pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<(PipelineConfig, SyntheticConfig)> {
    let (mut cfg, synth) = match path {
        None => (PipelineConfig::default(), SyntheticConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| invalid(path, e))?;
            let mut table: toml::Table = toml::from_str(&text).map_err(|e| invalid(path, e))?;
            let synth = match table.remove("synthetic") {
                None => SyntheticConfig::default(),
                Some(toml::Value::Table(t)) => {
                    check_keys(path, &t, &SyntheticConfig::default(), "synthetic")?;
                    toml::Value::Table(t).try_into().map_err(|e| invalid(path, e))?
                }
                Some(_) => return Err(invalid(path, "`synthetic` must be a table")),
            };
            check_keys(path, &table, &PipelineConfig::default(), "pipeline")?;
            let cfg: PipelineConfig = toml::Value::Table(table).try_into().map_err(|e| invalid(path, e))?;
            (cfg, synth)
        }
    };
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(space) = &overrides.space {
        cfg.space = space.clone();
    }
    if let Some(k) = overrides.top_k {
        cfg.top_k = k;
    }
    cfg.validate()?;
    Ok((cfg, synth))
}
