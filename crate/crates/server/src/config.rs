//! Presentation settings shared by every client of one server process.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use clinpath::analytics::DEFAULT_THRESHOLD_PERCENT;
use clinpath::{DayStatus, ResultCategory};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Theme {
    #[default]
    Light,
    Dark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresentationConfig {
    pub category_colors: BTreeMap<ResultCategory, String>,
    pub status_colors: BTreeMap<DayStatus, String>,
    pub theme: Theme,
    pub rc_threshold_percent: f64,
}

impl Default for PresentationConfig {
    fn default() -> Self {
        Self {
            category_colors: ResultCategory::ALL
                .iter()
                .map(|c| (*c, c.default_color().to_owned()))
                .collect(),
            status_colors: DayStatus::ALL
                .iter()
                .map(|s| (*s, s.default_color().to_owned()))
                .collect(),
            theme: Theme::Light,
            rc_threshold_percent: DEFAULT_THRESHOLD_PERCENT,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("missing color for category {0:?}")]
    MissingCategoryColor(ResultCategory),
    #[error("missing color for day status {0:?}")]
    MissingStatusColor(DayStatus),
    #[error("invalid color {0:?}; expected #rgb or #rrggbb")]
    BadColor(String),
    #[error("rc_threshold_percent must be a positive number, got {0}")]
    BadThreshold(f64),
}

fn is_color(text: &str) -> bool {
    match text.strip_prefix('#') {
        Some(hex) => matches!(hex.len(), 3 | 6 | 8) && hex.chars().all(|c| c.is_ascii_hexdigit()),
        None => false,
    }
}

impl PresentationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for c in ResultCategory::ALL {
            let color = self
                .category_colors
                .get(&c)
                .ok_or(ConfigError::MissingCategoryColor(c))?;
            if !is_color(color) {
                return Err(ConfigError::BadColor(color.clone()));
            }
        }
        for s in DayStatus::ALL {
            let color = self.status_colors.get(&s).ok_or(ConfigError::MissingStatusColor(s))?;
            if !is_color(color) {
                return Err(ConfigError::BadColor(color.clone()));
            }
        }
        if !(self.rc_threshold_percent > 0.0 && self.rc_threshold_percent.is_finite()) {
            return Err(ConfigError::BadThreshold(self.rc_threshold_percent));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ConfigStoreError {
    #[error("cannot access config file {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("config file {path} is not valid JSON: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("config file {path}: {source}")]
    Invalid { path: PathBuf, source: ConfigError },
}

/// The current config behind an atomic pointer swap. A request takes one
/// snapshot and keeps it for its whole lifetime.
#[derive(Debug)]
pub struct ConfigStore {
    current: RwLock<Arc<PresentationConfig>>,
    sidecar: Option<PathBuf>,
}

impl ConfigStore {
    pub fn in_memory(config: PresentationConfig) -> Self {
        Self {
            current: RwLock::new(Arc::new(config)),
            sidecar: None,
        }
    }

    /// Loads from `path` if it exists, otherwise starts from the defaults.
    /// Later updates are written back to `path`.
    pub fn with_sidecar(path: impl Into<PathBuf>) -> Result<Self, ConfigStoreError> {
        let path = path.into();
        let config = match fs::read(&path) {
            Ok(bytes) => {
                let config: PresentationConfig = serde_json::from_slice(&bytes)
                    .map_err(|source| ConfigStoreError::Parse { path: path.clone(), source })?;
                config
                    .validate()
                    .map_err(|source| ConfigStoreError::Invalid { path: path.clone(), source })?;
                config
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => PresentationConfig::default(),
            Err(source) => return Err(ConfigStoreError::Io { path, source }),
        };
        Ok(Self {
            current: RwLock::new(Arc::new(config)),
            sidecar: Some(path),
        })
    }

    pub fn sidecar(&self) -> Option<&Path> {
        self.sidecar.as_deref()
    }

    pub fn snapshot(&self) -> Arc<PresentationConfig> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Validates, persists, then publishes. On failure nothing changes.
    pub fn replace(&self, config: PresentationConfig) -> Result<Arc<PresentationConfig>, ReplaceError> {
        config.validate().map_err(ReplaceError::Invalid)?;
        let mut guard = self.current.write().unwrap_or_else(|e| e.into_inner());
        if let Some(path) = &self.sidecar {
            write_atomic(path, &config).map_err(|source| ReplaceError::Persist {
                path: path.clone(),
                source,
            })?;
        }
        let next = Arc::new(config);
        *guard = next.clone();
        Ok(next)
    }
}

#[derive(Debug, Error)]
pub enum ReplaceError {
    #[error(transparent)]
    Invalid(ConfigError),
    #[error("cannot persist config to {path}: {source}")]
    Persist { path: PathBuf, source: io::Error },
}

fn write_atomic(path: &Path, config: &PresentationConfig) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut file = fs::File::create(&tmp)?;
        serde_json::to_writer_pretty(&mut file, config)?;
        file.write_all(b"\n")?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)
}
