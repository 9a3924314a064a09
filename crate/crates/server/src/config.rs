use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value for {key}: {value:?}")]
    BadValue { key: &'static str, value: String },
}

/// Server settings. Every key can be overridden by an environment variable
/// of the same name in upper case, optionally prefixed with `AREVAL_`
/// (the prefixed form wins).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind_address: String,
    pub storage_root: PathBuf,
    /// Live frame queue bound per session.
    pub queue_bound: usize,
    /// Timeout applied to registered models that do not set their own.
    pub default_timeout_ms: u64,
    /// Base directory for relative mesh and reference paths.
    pub asset_root: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind_address: "127.0.0.1:8080".into(),
            storage_root: PathBuf::from("areval-data"),
            queue_bound: 8,
            default_timeout_ms: areval_core::gateway::DEFAULT_TIMEOUT_MS,
            asset_root: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &'static str, value: String) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::BadValue { key, value })
}

impl ServerConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Reads `path` if given, otherwise starts from defaults, then applies
    /// process environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_toml(&text, p)?
            }
            None => ServerConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let get = |key: &str| lookup(&format!("AREVAL_{key}")).or_else(|| lookup(key));
        if let Some(v) = get("BIND_ADDRESS") {
            self.bind_address = v;
        }
        if let Some(v) = get("STORAGE_ROOT") {
            self.storage_root = PathBuf::from(v);
        }
        if let Some(v) = get("QUEUE_BOUND") {
            self.queue_bound = parse("queue_bound", v)?;
        }
        if let Some(v) = get("DEFAULT_TIMEOUT_MS") {
            self.default_timeout_ms = parse("default_timeout_ms", v)?;
        }
        if let Some(v) = get("ASSET_ROOT") {
            self.asset_root = Some(PathBuf::from(v));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.queue_bound == 0 {
            return Err(ConfigError::BadValue {
                key: "queue_bound",
                value: "0".into(),
            });
        }
        if self.default_timeout_ms == 0 {
            return Err(ConfigError::BadValue {
                key: "default_timeout_ms",
                value: "0".into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn file_then_env() {
        let mut c = ServerConfig::from_toml("bind_address = \"0.0.0.0:9000\"\nqueue_bound = 3\n", Path::new("x.toml")).unwrap();
        assert_eq!(c.queue_bound, 3);
        assert_eq!(c.default_timeout_ms, 5000);
        let env: HashMap<&str, &str> = [("QUEUE_BOUND", "5"), ("AREVAL_QUEUE_BOUND", "6"), ("STORAGE_ROOT", "/tmp/s")].into();
        c.apply_env(|k| env.get(k).map(|s| s.to_string())).unwrap();
        assert_eq!((c.queue_bound, c.storage_root.as_path()), (6, Path::new("/tmp/s")));
        assert_eq!(c.bind_address, "0.0.0.0:9000");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_numbers() {
        assert!(ServerConfig::from_toml("bind = 1", Path::new("x")).is_err());
        let mut c = ServerConfig::default();
        assert!(c.apply_env(|k| (k == "QUEUE_BOUND").then(|| "many".into())).is_err());
        c.queue_bound = 0;
        assert!(c.validate().is_err());
    }
}
