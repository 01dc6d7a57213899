//! Service configuration file (TOML) with environment overrides.
//!
//! ```toml
//! registry_path = "cameras.json"
//! mode = "storm_advisory"          # or "normal"
//! interval_override = 600          # seconds, optional, at least 60
//! data_dir = "data"
//! listen_address = "127.0.0.1:8080"
//! map_url = "https://maps.example.org/flood"   # optional
//!
//! [capture]
//! pool_size = 256
//! per_stream_deadline = 15
//!
//! [classifier]
//! kind = "stub"                    # or "external" with socket = "/run/model.sock"
//!
//! [detector]                       # optional
//! kind = "external"
//! socket = "/run/detector.sock"
//!
//! [notification]
//! mode = "on_change"
//! min_gap = 300
//! recipients = ["https://hooks.example.org/flood"]
//! ```
//!
//! Relative paths resolve against the config file's directory.
//! `FLOODWATCH_MODE` and `FLOODWATCH_LISTEN` override `mode` and
//! `listen_address`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ingest::CaptureConfig;
use crate::mapper::{refresh_interval, RefreshMode, DEFAULT_RETENTION};
use crate::notifier::NotificationPolicy;
use crate::water_level::GradingConfig;

pub const ENV_MODE: &str = "FLOODWATCH_MODE";
pub const ENV_LISTEN: &str = "FLOODWATCH_LISTEN";
pub const MIN_INTERVAL: Duration = Duration::from_secs(60);

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierChoice {
    Stub,
    External {
        socket: PathBuf,
        #[serde(default)]
        single_threaded: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorChoice {
    External { socket: PathBuf },
    /// Precomputed `{tvid}.json` records.
    Directory { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub registry_path: PathBuf,
    /// Accept hand-edited registry documents (trailing commas, `Name =` prefix).
    #[serde(default)]
    pub lenient_registry: bool,
    #[serde(default)]
    pub capture: CaptureConfig,
    #[serde(default)]
    pub mode: RefreshMode,
    /// Seconds between rounds, replacing the mode's interval.
    #[serde(default)]
    pub interval_override: Option<f64>,
    #[serde(default = "default_classifier")]
    pub classifier: ClassifierChoice,
    #[serde(default)]
    pub detector: Option<DetectorChoice>,
    #[serde(default)]
    pub grading: GradingConfig,
    #[serde(default)]
    pub notification: NotificationPolicy,
    pub data_dir: PathBuf,
    #[serde(default = "default_listen")]
    pub listen_address: SocketAddr,
    /// Public map link placed in reports; defaults to this server's map.
    #[serde(default)]
    pub map_url: Option<String>,
    #[serde(default = "default_retention")]
    pub retention: usize,
}

fn default_classifier() -> ClassifierChoice {
    ClassifierChoice::Stub
}

fn default_listen() -> SocketAddr {
    ([127, 0, 0, 1], 8080).into()
}

fn default_retention() -> usize {
    DEFAULT_RETENTION
}

impl PipelineConfig {
    /// Minimal configuration: stub classifier, no detector, no recipients.
    pub fn new(registry_path: impl Into<PathBuf>, data_dir: impl Into<PathBuf>) -> Self {
        Self {
            registry_path: registry_path.into(),
            lenient_registry: false,
            capture: CaptureConfig::default(),
            mode: RefreshMode::default(),
            interval_override: None,
            classifier: ClassifierChoice::Stub,
            detector: None,
            grading: GradingConfig::default(),
            notification: NotificationPolicy::default(),
            data_dir: data_dir.into(),
            listen_address: default_listen(),
            map_url: None,
            retention: DEFAULT_RETENTION,
        }
    }

    /// Reads, applies process environment overrides and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::from_toml(&text, base)?;
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without validation; relative paths are joined onto `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.registry_path);
        rebase(&mut cfg.data_dir);
        match &mut cfg.classifier {
            ClassifierChoice::External { socket, .. } => rebase(socket),
            ClassifierChoice::Stub => {}
        }
        match &mut cfg.detector {
            Some(DetectorChoice::External { socket }) => rebase(socket),
            Some(DetectorChoice::Directory { path }) => rebase(path),
            None => {}
        }
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(m) = var(ENV_MODE) {
            self.mode = m.parse().map_err(|e| ConfigError::Invalid(format!("{ENV_MODE}: {e}")))?;
        }
        if let Some(l) = var(ENV_LISTEN) {
            self.listen_address = l
                .parse()
                .map_err(|e| ConfigError::Invalid(format!("{ENV_LISTEN} `{l}`: {e}")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.registry_path.is_file() {
            return Err(ConfigError::Invalid(format!(
                "registry {} does not exist",
                self.registry_path.display()
            )));
        }
        if let Some(s) = self.interval_override {
            if !(s.is_finite() && s >= MIN_INTERVAL.as_secs_f64()) {
                return Err(ConfigError::Invalid(format!(
                    "interval_override {s} s is below the {} s minimum",
                    MIN_INTERVAL.as_secs()
                )));
            }
        }
        self.capture
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("capture: {e}")))?;
        if let ClassifierChoice::External { socket, .. } = &self.classifier {
            if !socket.exists() {
                return Err(ConfigError::Invalid(format!("classifier socket {} does not exist", socket.display())));
            }
        }
        match &self.detector {
            Some(DetectorChoice::External { socket }) if !socket.exists() => {
                return Err(ConfigError::Invalid(format!("detector socket {} does not exist", socket.display())))
            }
            Some(DetectorChoice::Directory { path }) if !path.is_dir() => {
                return Err(ConfigError::Invalid(format!("detector directory {} does not exist", path.display())))
            }
            _ => {}
        }
        if self.retention == 0 {
            return Err(ConfigError::Invalid("retention must be at least 1".into()));
        }
        if let Some(u) = &self.map_url {
            url::Url::parse(u).map_err(|e| ConfigError::Invalid(format!("map_url `{u}`: {e}")))?;
        }
        Ok(())
    }

    pub fn interval(&self) -> Duration {
        refresh_interval(self.mode, self.interval_override.map(Duration::from_secs_f64))
    }

    pub fn map_url(&self) -> String {
        self.map_url
            .clone()
            .unwrap_or_else(|| format!("http://{}/map.geojson", self.listen_address))
    }

    pub fn rounds_dir(&self) -> PathBuf {
        self.data_dir.join("rounds")
    }

    pub fn frames_dir(&self) -> PathBuf {
        self.data_dir.join("frames")
    }
}
