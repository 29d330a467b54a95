use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("invalid value for `{key}`: {reason}")]
    Value { key: String, reason: String },
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
}

/// Service settings. The config file holds `key = value` lines; `#`
/// starts a comment. Any key can be overridden by an environment variable
/// named `LIESENSOR_` plus the upper-cased key, e.g. `LIESENSOR_BIND`.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Text model bundle.
    pub bundle: PathBuf,
    /// CNN weight file.
    pub weights: PathBuf,
    /// Haar cascade XML; the bundled frontal-face cascade when absent.
    pub cascade: Option<PathBuf>,
    /// Largest accepted decoded image, in bytes.
    pub max_image_bytes: usize,
    pub request_timeout: Duration,
    /// When set, every verification result is appended to this file as
    /// one `session_id record` line.
    pub history_log: Option<PathBuf>,
}

pub const ENV_PREFIX: &str = "LIESENSOR_";
const KEYS: [&str; 7] = [
    "bind",
    "bundle",
    "weights",
    "cascade",
    "max_image_bytes",
    "request_timeout_ms",
    "history_log",
];

impl ServiceConfig {
    pub const DEFAULT_BIND: &'static str = "127.0.0.1:8080";
    pub const DEFAULT_MAX_IMAGE_BYTES: usize = 4 << 20;
    pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;

    /// Parses config text, then applies overrides from `env`. Relative
    /// paths in the file resolve against `base`.
    pub fn parse(
        text: &str,
        base: &Path,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut values: Vec<(String, String)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Line {
                line: n + 1,
                reason: "expected `key = value`".into(),
            })?;
            let k = k.trim().to_ascii_lowercase();
            if !KEYS.contains(&k.as_str()) {
                return Err(ConfigError::Line {
                    line: n + 1,
                    reason: format!("unknown key `{k}`"),
                });
            }
            let v = v.trim();
            let v = if matches!(k.as_str(), "bundle" | "weights" | "cascade" | "history_log")
                && !v.is_empty()
            {
                base.join(v).to_string_lossy().into_owned()
            } else {
                v.to_string()
            };
            values.push((k, v));
        }
        for (name, v) in env {
            if let Some(k) = name.strip_prefix(ENV_PREFIX) {
                let k = k.to_ascii_lowercase();
                if KEYS.contains(&k.as_str()) {
                    values.push((k, v));
                }
            }
        }
        let get = |key: &str| {
            values
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
                .filter(|v| !v.is_empty())
        };
        let number = |key: &str, default: u64| -> Result<u64, ConfigError> {
            get(key).map_or(Ok(default), |v| {
                v.parse().map_err(|_| ConfigError::Value {
                    key: key.into(),
                    reason: format!("`{v}` is not a non-negative integer"),
                })
            })
        };
        let bind = get("bind").unwrap_or_else(|| Self::DEFAULT_BIND.into());
        Ok(ServiceConfig {
            bind: bind.parse().map_err(|_| ConfigError::Value {
                key: "bind".into(),
                reason: format!("`{bind}` is not host:port"),
            })?,
            bundle: get("bundle").ok_or(ConfigError::Missing("bundle"))?.into(),
            weights: get("weights")
                .ok_or(ConfigError::Missing("weights"))?
                .into(),
            cascade: get("cascade").map(PathBuf::from),
            max_image_bytes: number("max_image_bytes", Self::DEFAULT_MAX_IMAGE_BYTES as u64)?
                as usize,
            request_timeout: Duration::from_millis(number(
                "request_timeout_ms",
                Self::DEFAULT_TIMEOUT_MS,
            )?),
            history_log: get("history_log").map(PathBuf::from),
        })
    }

    /// Reads `path` and applies overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(
            &text,
            path.parent().unwrap_or(Path::new(".")),
            std::env::vars(),
        )
    }
}
