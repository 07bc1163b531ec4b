//! Layered configuration: built-in defaults, then a key=value file, then
//! environment variables, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use memorb_server::config::ServiceConfig;

pub const DEFAULT_DATA_DIR: &str = "memorb-data";

/// Maps a config-file key onto the environment variable it stands for.
fn file_key(key: &str) -> String {
    match key {
        "dim" => "EMBED_DIM".to_owned(),
        "k" => "TOPK_DEFAULT".to_owned(),
        other => other.to_ascii_uppercase(),
    }
}

pub fn apply_file(config: &mut ServiceConfig, path: &Path) -> Result<(), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let table: toml::Table = text.parse().map_err(|e| format!("{}: {e}", path.display()))?;
    for (key, value) in table {
        let value = match value {
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            other => return Err(format!("{}: unsupported value for {key}: {other}", path.display())),
        };
        config
            .set(&file_key(&key), &value)
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}

#[derive(Debug, Default, Clone)]
pub struct FlagOverrides {
    pub data_dir: Option<PathBuf>,
    pub dim: Option<usize>,
    pub k: Option<usize>,
    pub cross_user: Option<bool>,
    pub llm_endpoint: Option<String>,
    pub embed_endpoint: Option<String>,
}

pub fn resolve(
    file: Option<&Path>,
    env: impl Fn(&str) -> Option<String>,
    flags: &FlagOverrides,
) -> Result<ServiceConfig, String> {
    let mut config = ServiceConfig {
        data_dir: Some(PathBuf::from(DEFAULT_DATA_DIR)),
        ..ServiceConfig::default()
    };
    if let Some(path) = file {
        apply_file(&mut config, path)?;
    }
    config.apply_lookup(env)?;
    if let Some(dir) = &flags.data_dir {
        config.data_dir = Some(dir.clone());
    }
    if let Some(dim) = flags.dim {
        config.set("EMBED_DIM", &dim.to_string())?;
    }
    if let Some(k) = flags.k {
        config.set("TOPK_DEFAULT", &k.to_string())?;
    }
    if let Some(cross_user) = flags.cross_user {
        config.cross_user = cross_user;
    }
    if let Some(url) = &flags.llm_endpoint {
        config.llm_endpoint = Some(url.clone());
    }
    if let Some(url) = &flags.embed_endpoint {
        config.embed_endpoint = Some(url.clone());
    }
    Ok(config)
}
