//! Server configuration: `replicator.toml`, then environment overrides.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

pub const CONFIG_FILE: &str = "replicator.toml";
pub const DEFAULT_WORKERS: usize = 2;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: SocketAddr,
    pub work_root: PathBuf,
    pub registry_root: PathBuf,
    /// Directory of `*.ct.json` files served under `/api/templates`.
    pub templates_dir: Option<PathBuf>,
    /// Worker pool size; unset means [`DEFAULT_WORKERS`] for the server and
    /// one for a single command-line run.
    pub workers: Option<usize>,
    /// Container engine binary; `None` runs process templates only.
    pub engine: Option<String>,
    /// Built single-page app, served under `/app`.
    pub static_dir: Option<PathBuf>,
    pub max_body_bytes: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            work_root: PathBuf::from(".replicator/jobs"),
            registry_root: PathBuf::from(".replicator/registry"),
            templates_dir: None,
            workers: None,
            engine: Some("docker".into()),
            static_dir: None,
            max_body_bytes: 64 << 20,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {var}: {message}")]
    Env { var: &'static str, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl Config {
    /// Reads `dir/replicator.toml` if present, then applies `REPLICATOR_*`
    /// variables from the process environment.
    pub fn discover(dir: &Path) -> Result<Self, ConfigError> {
        let path = dir.join(CONFIG_FILE);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => Some(t),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(source) => return Err(ConfigError::Read { path, source }),
        };
        Self::load(text.as_deref(), &path, |k| std::env::var(k).ok())
    }

    /// `file` is the TOML text (if any) read from `origin`.
    pub fn load(file: Option<&str>, origin: &Path, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut c: Config = match file {
            Some(text) => toml::from_str(text)
                .map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })?,
            None => Config::default(),
        };
        if let Some(v) = env("REPLICATOR_BIND") {
            c.bind = v.parse().map_err(|e| ConfigError::Env { var: "REPLICATOR_BIND", message: format!("{e}") })?;
        }
        if let Some(v) = env("REPLICATOR_PORT") {
            c.bind.set_port(v.parse().map_err(|e| ConfigError::Env { var: "REPLICATOR_PORT", message: format!("{e}") })?);
        }
        if let Some(v) = env("REPLICATOR_WORK_ROOT") {
            c.work_root = v.into();
        }
        if let Some(v) = env("REPLICATOR_REGISTRY_ROOT") {
            c.registry_root = v.into();
        }
        if let Some(v) = env("REPLICATOR_TEMPLATES_DIR") {
            c.templates_dir = Some(v.into());
        }
        if let Some(v) = env("REPLICATOR_WORKERS") {
            c.workers = Some(v.parse().map_err(|e| ConfigError::Env { var: "REPLICATOR_WORKERS", message: format!("{e}") })?);
        }
        if let Some(v) = env("REPLICATOR_ENGINE") {
            c.engine = Some(v);
        }
        if let Some(v) = env("REPLICATOR_STATIC_DIR") {
            c.static_dir = Some(v.into());
        }
        // "none" or an empty name disables the container runner.
        if c.engine.as_deref().is_some_and(|e| e.is_empty() || e == "none") {
            c.engine = None;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn worker_count(&self) -> usize {
        self.workers.unwrap_or(DEFAULT_WORKERS)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == Some(0) {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if self.work_root.as_os_str().is_empty() || self.registry_root.as_os_str().is_empty() {
            return Err(ConfigError::Invalid("work_root and registry_root must be set".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env<'a>(vars: &'a [(&'a str, &'a str)]) -> impl Fn(&str) -> Option<String> + 'a {
        move |k| vars.iter().find(|(n, _)| *n == k).map(|(_, v)| v.to_string())
    }

    #[test]
    fn defaults_bind_to_localhost() {
        let c = Config::load(None, Path::new("x"), env(&[])).unwrap();
        assert_eq!(c, Config::default());
        assert!(c.bind.ip().is_loopback());
    }

    #[test]
    fn file_then_env() {
        let file = "workers = 4\nengine = \"podman\"\nwork_root = \"/tmp/w\"\n";
        let c = Config::load(Some(file), Path::new("r.toml"), env(&[("REPLICATOR_PORT", "9000"), ("REPLICATOR_WORKERS", "1")])).unwrap();
        assert_eq!(c.workers, Some(1));
        assert_eq!(c.engine.as_deref(), Some("podman"));
        assert_eq!(c.work_root, PathBuf::from("/tmp/w"));
        assert_eq!(c.bind.port(), 9000);
    }

    #[test]
    fn engine_none_disables() {
        let c = Config::load(None, Path::new("x"), env(&[("REPLICATOR_ENGINE", "none")])).unwrap();
        assert_eq!(c.engine, None);
        let c = Config::load(Some("engine = \"\""), Path::new("x"), env(&[])).unwrap();
        assert_eq!(c.engine, None);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(Config::load(Some("workers = 0"), Path::new("x"), env(&[])), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::load(Some("port = 1"), Path::new("x"), env(&[])), Err(ConfigError::Parse { .. })));
        assert!(matches!(
            Config::load(None, Path::new("x"), env(&[("REPLICATOR_WORKERS", "many")])),
            Err(ConfigError::Env { var: "REPLICATOR_WORKERS", .. })
        ));
    }
}
