//! Service configuration, read from a TOML file.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! store_dir = "data"            # relative to the config file
//! dev_mode = true               # trust the student id in the URL
//! student_header = "x-student-id"
//!
//! [[rounds]]
//! id = "round-1"
//! opens_at = "2025-03-10T00:00:00Z"
//! closes_at = "2025-03-24T00:00:00Z"
//!
//! [rounds.provider]
//! kind = "http_llm"
//! endpoint_url = "https://llm.example.org/v1/chat/completions"
//! model_name = "gemini-2.0-flash"
//! api_key_ref = "DRAFTCHECK_API_KEY"
//! prompt_version = "v1"
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use draftcheck_core::gateway::ConfigError as ProviderConfigError;
use draftcheck_core::store::valid_round_id;
use draftcheck_core::ProviderConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_STUDENT_HEADER: &str = "x-student-id";

fn default_listen() -> SocketAddr {
    DEFAULT_LISTEN.parse().expect("valid default address")
}

fn default_student_header() -> String {
    DEFAULT_STUDENT_HEADER.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub store_dir: PathBuf,
    /// Accept the student id from the URL without the identity header.
    #[serde(default)]
    pub dev_mode: bool,
    /// Header set by the authenticating proxy outside dev mode.
    #[serde(default = "default_student_header")]
    pub student_header: String,
    /// Static UI assets served at `/` when set.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    pub rounds: Vec<RoundConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundConfig {
    pub id: String,
    #[serde(default)]
    pub opens_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub closes_at: Option<DateTime<Utc>>,
    pub provider: ProviderConfig,
}

impl RoundConfig {
    pub fn is_open(&self, now: DateTime<Utc>) -> bool {
        self.opens_at.is_none_or(|t| now >= t) && self.closes_at.is_none_or(|t| now < t)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("{path}: round #{index} (`{round}`): {problem}")]
    Round {
        path: PathBuf,
        index: usize,
        round: String,
        problem: String,
    },
    #[error("{path}: {problem}")]
    Invalid { path: PathBuf, problem: String },
}

impl ServiceConfig {
    /// Reads and validates a config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if config.store_dir.is_relative() {
            config.store_dir = base.join(&config.store_dir);
        }
        if let Some(dir) = config.static_dir.as_mut().filter(|d| d.is_relative()) {
            *dir = base.join(&*dir);
        }
        Ok(config)
    }

    /// Parses and validates config text; `origin` only labels diagnostics.
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let config: ServiceConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax {
            path: origin.to_path_buf(),
            message: describe_toml_error(text, &e),
        })?;
        config.validate(origin)?;
        Ok(config)
    }

    fn validate(&self, origin: &Path) -> Result<(), ConfigError> {
        let invalid = |problem: String| ConfigError::Invalid {
            path: origin.to_path_buf(),
            problem,
        };
        if self.rounds.is_empty() {
            return Err(invalid("at least one [[rounds]] entry is required".into()));
        }
        if self.student_header.trim().is_empty() {
            return Err(invalid("`student_header` must not be empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (index, round) in self.rounds.iter().enumerate() {
            let fail = |problem: String| ConfigError::Round {
                path: origin.to_path_buf(),
                index: index + 1,
                round: round.id.clone(),
                problem,
            };
            if !valid_round_id(&round.id) {
                return Err(fail("id may only use letters, digits, `_`, `-` and `.`".into()));
            }
            if !seen.insert(round.id.as_str()) {
                return Err(fail("duplicate round id".into()));
            }
            if let (Some(open), Some(close)) = (round.opens_at, round.closes_at) {
                if close <= open {
                    return Err(fail("`closes_at` must be after `opens_at`".into()));
                }
            }
            round
                .provider
                .validate()
                .map_err(|e: ProviderConfigError| fail(format!("provider: {e}")))?;
        }
        Ok(())
    }

    pub fn round(&self, id: &str) -> Option<&RoundConfig> {
        self.rounds.iter().find(|r| r.id == id)
    }
}

fn describe_toml_error(text: &str, e: &toml::de::Error) -> String {
    let message = e.message().to_string();
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {message}")
        }
        None => message,
    }
}
