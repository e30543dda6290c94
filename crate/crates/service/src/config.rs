//! Settings resolution: command-line flags, then environment variables,
//! then an optional TOML file, then defaults.
//!
//! ```toml
//! data = "/var/lib/harmlens/store.jsonl"
//! port = 8080
//! bind = "127.0.0.1"
//! token_secret = "change me"
//! taxonomy = "taxonomy-v2.json"
//! ```

use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

pub const DEFAULT_DATA: &str = "harmlens.jsonl";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config file {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
}

/// Contents of the config file; every key optional.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub port: Option<u16>,
    pub bind: Option<IpAddr>,
    pub token_secret: Option<String>,
    pub taxonomy: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }
}

/// Values given on the command line or through the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub port: Option<u16>,
    pub bind: Option<IpAddr>,
    pub token_secret: Option<String>,
    pub taxonomy: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    pub data: PathBuf,
    pub port: u16,
    pub bind: IpAddr,
    pub token_secret: Option<String>,
    /// Taxonomy document registered (and made current) at startup.
    pub taxonomy: Option<PathBuf>,
}

impl Settings {
    pub fn resolve(overrides: Overrides, file: FileConfig) -> Self {
        Self {
            data: overrides.data.or(file.data).unwrap_or_else(|| DEFAULT_DATA.into()),
            port: overrides.port.or(file.port).unwrap_or(DEFAULT_PORT),
            bind: overrides.bind.or(file.bind).unwrap_or(IpAddr::V4(Ipv4Addr::LOCALHOST)),
            token_secret: overrides.token_secret.or(file.token_secret),
            taxonomy: overrides.taxonomy.or(file.taxonomy),
        }
    }
}
