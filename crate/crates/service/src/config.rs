use std::path::{Path, PathBuf};
use std::time::Duration;

use ivirs_core::corpus::CorpusFormat;
use ivirs_core::pirs::RankingParams;
use ivirs_core::session::SessionConfig;
use ivirs_core::vdm_sim::ErrorModel;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

/// Server configuration, read from TOML.
///
/// ```toml
/// listen = "127.0.0.1:8080"
/// index = "data/index.json"
/// profiles = "data/profiles.txt"
/// outbox = "outbox"
/// session_timeout_secs = 1800
///
/// [ranking]
/// k1 = 1.2
///
/// [error_model]
/// accuracy = 0.8
///
/// [session]
/// theta_confirm = 0.5
/// ```
///
/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    /// Serialized collection written by `ivirs index`.
    pub index: PathBuf,
    pub profiles: Option<PathBuf>,
    pub outbox: PathBuf,
    pub session_timeout_secs: u64,
    /// Default format for `POST /admin/index` bodies that name none.
    pub corpus_format: CorpusFormat,
    /// Extra words the simulated recognizers may hear.
    pub recognizer_words: Vec<String>,
    pub ranking: RankingParams,
    pub error_model: ErrorModel,
    pub session: SessionConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            index: PathBuf::from("index.json"),
            profiles: None,
            outbox: PathBuf::from("outbox"),
            session_timeout_secs: 1800,
            corpus_format: CorpusFormat::TrecSgml,
            recognizer_words: Vec::new(),
            ranking: RankingParams::default(),
            error_model: ErrorModel::default(),
            session: SessionConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.error_model.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text).map_err(|reason| ConfigError::Parse {
            path: path.to_path_buf(),
            reason,
        })?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.index);
        fix(&mut self.outbox);
        if let Some(p) = self.profiles.as_mut() {
            fix(p);
        }
    }

    pub fn session_timeout(&self) -> Duration {
        Duration::from_secs(self.session_timeout_secs)
    }
}
