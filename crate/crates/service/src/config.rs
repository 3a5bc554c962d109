//! Service configuration: defaults, then the TOML config file, then
//! environment variables and command-line flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

pub const DEFAULT_HOST: &str = "127.0.0.1";
pub const DEFAULT_PORT: u16 = 7878;
pub const DEFAULT_STATE_FILE: &str = "privdash-state.json";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config file {path} is invalid: {message}")]
    Invalid { path: PathBuf, message: String },
}

/// Keys accepted in the config file. All optional.
#[derive(Debug, Default, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub host: Option<String>,
    pub port: Option<u16>,
    pub device_config: Option<PathBuf>,
    pub state_path: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::parse(&text).map_err(|message| ConfigError::Invalid { path: path.into(), message })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Device description; the bundled demo device when absent.
    pub device_config: Option<PathBuf>,
    pub state_path: PathBuf,
}

impl ServiceConfig {
    /// `overrides` holds values from flags or environment and wins over the file.
    pub fn resolve(file: FileConfig, overrides: FileConfig) -> Self {
        ServiceConfig {
            host: overrides.host.or(file.host).unwrap_or_else(|| DEFAULT_HOST.into()),
            port: overrides.port.or(file.port).unwrap_or(DEFAULT_PORT),
            device_config: overrides.device_config.or(file.device_config),
            state_path: overrides.state_path.or(file.state_path).unwrap_or_else(|| DEFAULT_STATE_FILE.into()),
        }
    }

    pub fn bind_addr(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let file = FileConfig::parse("port = 9000\nstate_path = \"/var/lib/pd.json\"\n").unwrap();
        let cfg = ServiceConfig::resolve(file.clone(), FileConfig::default());
        assert_eq!(cfg.port, 9000);
        assert_eq!(cfg.host, DEFAULT_HOST);
        assert_eq!(cfg.state_path, PathBuf::from("/var/lib/pd.json"));

        let cfg = ServiceConfig::resolve(file, FileConfig { port: Some(1234), ..Default::default() });
        assert_eq!(cfg.port, 1234);
        assert_eq!(cfg.bind_addr(), "127.0.0.1:1234");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(FileConfig::parse("prot = 1").is_err());
        assert!(FileConfig::parse("port = \"x\"").is_err());
    }
}
