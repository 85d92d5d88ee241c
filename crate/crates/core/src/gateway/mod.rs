//! Feedback providers: configuration, the rule oracle and the HTTP
//! chat-completion client, behind one [`CompletionProvider`] trait.

mod http;

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::feedback::{parse_feedback, DraftError, FeedbackTable, ParseError, PromptVersion, ReportDraft};
use crate::mock;

pub use http::{ChatCompletionRequest, ChatMessage, HttpLlmProvider, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    MockRules,
    HttpLlm,
}

fn default_timeout_secs() -> f64 {
    60.0
}

fn default_max_retries() -> u32 {
    2
}

fn default_retry_base_ms() -> u64 {
    1000
}

/// Which provider answers a round's feedback requests and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<Url>,
    pub model_name: String,
    /// Name of the environment variable holding the API key. Read at call time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_ref: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First backoff delay; doubles on each retry, with jitter.
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
    pub prompt_version: PromptVersion,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("http_llm provider requires `endpoint_url`")]
    MissingEndpoint,
    #[error("http_llm provider requires `api_key_ref`")]
    MissingApiKeyRef,
    #[error("`timeout_secs` must be positive")]
    NonPositiveTimeout,
    #[error("`model_name` must not be empty")]
    EmptyModelName,
    #[error("cannot build HTTP client: {0}")]
    Client(String),
}

impl ProviderConfig {
    /// Rule-oracle configuration for a prompt version.
    pub fn mock(prompt_version: PromptVersion) -> Self {
        ProviderConfig {
            kind: ProviderKind::MockRules,
            endpoint_url: None,
            model_name: mock::MOCK_PROVIDER_ID.to_string(),
            api_key_ref: None,
            timeout_secs: default_timeout_secs(),
            max_retries: 0,
            retry_base_ms: default_retry_base_ms(),
            prompt_version,
        }
    }

    pub fn http(endpoint_url: Url, model_name: &str, api_key_ref: &str, prompt_version: PromptVersion) -> Self {
        ProviderConfig {
            kind: ProviderKind::HttpLlm,
            endpoint_url: Some(endpoint_url),
            model_name: model_name.to_string(),
            api_key_ref: Some(api_key_ref.to_string()),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            retry_base_ms: default_retry_base_ms(),
            prompt_version,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.model_name.trim().is_empty() {
            return Err(ConfigError::EmptyModelName);
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(ConfigError::NonPositiveTimeout);
        }
        if self.kind == ProviderKind::HttpLlm {
            if self.endpoint_url.is_none() {
                return Err(ConfigError::MissingEndpoint);
            }
            if self.api_key_ref.as_deref().is_none_or(|r| r.trim().is_empty()) {
                return Err(ConfigError::MissingApiKeyRef);
            }
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Id recorded on produced tables.
    pub fn provider_id(&self) -> &str {
        &self.model_name
    }
}

/// Transport-level outcome of asking a provider for feedback.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    /// Worth retrying: connection failure, timeout, 429 or 5xx.
    #[error("transient provider failure: {0}")]
    Transient(String),
    /// Not worth retrying: the upstream rejected the request.
    #[error("provider rejected the request: {0}")]
    Rejected(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    /// A response arrived but carried no completion text.
    #[error("malformed provider envelope")]
    Envelope { raw: String },
}

/// Text in, text out: a draft and prompt version go in, the provider's raw
/// answer comes out.
#[async_trait]
pub trait CompletionProvider: Send + Sync {
    async fn complete(&self, version: PromptVersion, draft: &ReportDraft) -> Result<String, ProviderError>;

    /// Upstream attempts made so far. Providers without transport report 0.
    fn attempts_made(&self) -> u64 {
        0
    }
}

/// The rule oracle as a provider.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockRulesProvider;

#[async_trait]
impl CompletionProvider for MockRulesProvider {
    async fn complete(&self, version: PromptVersion, draft: &ReportDraft) -> Result<String, ProviderError> {
        Ok(mock::mock_feedback(draft, version))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error(transparent)]
    InvalidDraft(#[from] DraftError),
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("provider response unparseable ({detail}); response begins: {excerpt:?}", excerpt = excerpt(raw))]
    ProviderResponseUnparseable { raw: String, detail: String },
    #[error("provider authentication failed: {0}")]
    AuthFailure(String),
}

impl GatewayError {
    /// Short machine-readable reason.
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::InvalidDraft(DraftError::EmptyDraft) => "empty_draft",
            GatewayError::InvalidDraft(DraftError::DraftTooLong(_)) => "draft_too_long",
            GatewayError::ProviderUnavailable(_) => "provider_unavailable",
            GatewayError::ProviderResponseUnparseable { .. } => "provider_unparseable",
            GatewayError::AuthFailure(_) => "auth_failure",
        }
    }

    /// Raw provider output, when one arrived.
    pub fn raw_response(&self) -> Option<&str> {
        match self {
            GatewayError::ProviderResponseUnparseable { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

const EXCERPT_CHARS: usize = 200;

fn excerpt(raw: &str) -> &str {
    match raw.char_indices().nth(EXCERPT_CHARS) {
        Some((i, _)) => &raw[..i],
        None => raw,
    }
}

/// Turns drafts into validated feedback tables through a configured provider.
#[derive(Clone)]
pub struct FeedbackGateway {
    config: ProviderConfig,
    provider: Arc<dyn CompletionProvider>,
}

impl std::fmt::Debug for FeedbackGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeedbackGateway")
            .field("kind", &self.config.kind)
            .field("model_name", &self.config.model_name)
            .field("prompt_version", &self.config.prompt_version)
            .finish()
    }
}

impl FeedbackGateway {
    pub fn from_config(config: ProviderConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let provider: Arc<dyn CompletionProvider> = match config.kind {
            ProviderKind::MockRules => Arc::new(MockRulesProvider),
            ProviderKind::HttpLlm => Arc::new(HttpLlmProvider::new(&config)?),
        };
        Ok(FeedbackGateway { config, provider })
    }

    /// Gateway over an arbitrary provider.
    pub fn with_provider(config: ProviderConfig, provider: Arc<dyn CompletionProvider>) -> Self {
        FeedbackGateway { config, provider }
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn prompt_version(&self) -> PromptVersion {
        self.config.prompt_version
    }

    pub fn provider(&self) -> &Arc<dyn CompletionProvider> {
        &self.provider
    }

    /// Validates the draft, asks the provider and parses its answer.
    ///
    /// Transport failures are retried inside the provider; a delivered but
    /// unparseable answer is never retried.
    pub async fn request_feedback(&self, draft: &ReportDraft) -> Result<FeedbackTable, GatewayError> {
        draft.validate()?;
        let version = self.config.prompt_version;
        let raw = match self.provider.complete(version, draft).await {
            Ok(raw) => raw,
            Err(ProviderError::Auth(msg)) => return Err(GatewayError::AuthFailure(msg)),
            Err(ProviderError::Envelope { raw }) => {
                return Err(GatewayError::ProviderResponseUnparseable {
                    raw,
                    detail: "no completion text in response envelope".into(),
                })
            }
            Err(e @ (ProviderError::Transient(_) | ProviderError::Rejected(_))) => {
                return Err(GatewayError::ProviderUnavailable(e.to_string()))
            }
        };
        parse_feedback(&raw, version, self.config.provider_id()).map_err(|e: ParseError| {
            GatewayError::ProviderResponseUnparseable {
                detail: e.to_string(),
                raw,
            }
        })
    }
}
