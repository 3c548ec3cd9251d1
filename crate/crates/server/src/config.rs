//! Server configuration, read from TOML.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! cache_budget_bytes = 2147483648
//! session_lifetime_secs = 3600
//! store_dir = "/var/lib/mivs"      # omit for an in-memory catalog
//! request_log = "/var/log/mivs.jsonl"  # omit to log to stderr
//!
//! [admin]
//! username = "admin"
//! password = "change-me-please"
//!
//! [[sources]]
//! source_id = "pacs"
//! root_path = "/data/pacs"
//! poll_interval_secs = 5
//! center_label = "Main"
//! ```
//!
//! `MIVS_LISTEN` overrides `listen`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use mivs_core::sync::SourceConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_LISTEN: &str = "MIVS_LISTEN";
pub const ENV_CONFIG: &str = "MIVS_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdminCredentials {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_budget")]
    pub cache_budget_bytes: u64,
    #[serde(default = "default_lifetime")]
    pub session_lifetime_secs: u64,
    #[serde(default)]
    pub store_dir: Option<PathBuf>,
    #[serde(default)]
    pub request_log: Option<PathBuf>,
    pub admin: AdminCredentials,
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_budget() -> u64 {
    2 << 30
}

fn default_lifetime() -> u64 {
    3600
}

impl Config {
    /// A config with defaults and the given bootstrap admin.
    pub fn new(admin_user: &str, admin_password: &str) -> Config {
        Config {
            listen: default_listen(),
            cache_budget_bytes: default_budget(),
            session_lifetime_secs: default_lifetime(),
            store_dir: None,
            request_log: None,
            admin: AdminCredentials {
                username: admin_user.into(),
                password: admin_password.into(),
            },
            sources: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Config, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and applies environment overrides.
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Config::from_toml(&text)?;
        if let Ok(listen) = std::env::var(ENV_LISTEN) {
            cfg.listen = listen;
            cfg.validate()?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.listen.parse::<SocketAddr>().is_err() {
            return bad(format!("listen {:?} is not a socket address", self.listen));
        }
        if self.session_lifetime_secs == 0 {
            return bad("session_lifetime_secs must be positive".into());
        }
        if let Err(e) = crate::auth::check_username(&self.admin.username) {
            return bad(format!("admin.username: {e}"));
        }
        if let Err(e) = crate::auth::check_password_policy(&self.admin.password) {
            return bad(format!("admin.password: {e}"));
        }
        SourceConfig::validate_all(&self.sources).or_else(|e| bad(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
        listen = "0.0.0.0:9000"
        cache_budget_bytes = 1000

        [admin]
        username = "root"
        password = "0123456789"

        [[sources]]
        source_id = "a"
        root_path = "/tmp/a"
    "#;

    #[test]
    fn parses_with_defaults() {
        let cfg = Config::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.listen, "0.0.0.0:9000");
        assert_eq!(cfg.cache_budget_bytes, 1000);
        assert_eq!(cfg.session_lifetime_secs, 3600);
        assert_eq!(cfg.sources[0].poll_interval_secs, 5);
        assert!(cfg.store_dir.is_none());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::from_toml(&SAMPLE.replace("0.0.0.0:9000", "nowhere")).is_err());
        assert!(Config::from_toml(&SAMPLE.replace("0123456789", "short")).is_err());
        assert!(Config::from_toml(&format!("bogus = 1\n{SAMPLE}")).is_err());
        assert!(Config::from_toml("listen = \"127.0.0.1:1\"").is_err());
    }
}
