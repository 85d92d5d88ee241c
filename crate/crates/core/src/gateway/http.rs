use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use serde::Serialize;
use serde_json::Value;
use url::Url;

use super::{CompletionProvider, ConfigError, ProviderConfig, ProviderError};
use crate::feedback::{system_prompt, PromptVersion, ReportDraft};

/// Exponential backoff: `base * 2^retry`, jittered into `[half, full]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
}

impl RetryPolicy {
    /// Upper bound of the delay before retry number `retry` (0-based).
    pub fn ceiling(&self, retry: u32) -> Duration {
        self.base.saturating_mul(1u32.checked_shl(retry).unwrap_or(u32::MAX))
    }

    pub fn delay(&self, retry: u32) -> Duration {
        let full = self.ceiling(retry);
        let half = full / 2;
        let spread = (full - half).as_micros() as u64;
        let jitter = if spread == 0 { 0 } else { rand::thread_rng().gen_range(0..=spread) };
        half + Duration::from_micros(jitter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatMessage {
    pub role: &'static str,
    pub content: String,
}

/// OpenAI-compatible chat-completions request body.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatCompletionRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatCompletionRequest {
    /// One system message carrying the prompt, one user message carrying the draft.
    pub fn for_draft(model: &str, version: PromptVersion, draft: &ReportDraft) -> Self {
        ChatCompletionRequest {
            model: model.to_string(),
            temperature: 0.0,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: system_prompt(version).to_string(),
                },
                ChatMessage {
                    role: "user",
                    content: draft.text.clone(),
                },
            ],
        }
    }
}

/// Chat-completion client with retries on transient failures.
#[derive(Debug)]
pub struct HttpLlmProvider {
    client: reqwest::Client,
    endpoint: Url,
    model: String,
    api_key_ref: String,
    retry: RetryPolicy,
    attempts: AtomicU64,
}

impl HttpLlmProvider {
    pub fn new(config: &ProviderConfig) -> Result<Self, ConfigError> {
        let endpoint = config.endpoint_url.clone().ok_or(ConfigError::MissingEndpoint)?;
        let api_key_ref = config.api_key_ref.clone().ok_or(ConfigError::MissingApiKeyRef)?;
        let client = reqwest::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| ConfigError::Client(e.to_string()))?;
        Ok(HttpLlmProvider {
            client,
            endpoint,
            model: config.model_name.clone(),
            api_key_ref,
            retry: RetryPolicy {
                max_retries: config.max_retries,
                base: Duration::from_millis(config.retry_base_ms),
            },
            attempts: AtomicU64::new(0),
        })
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    async fn send_once(&self, body: &ChatCompletionRequest, key: &str) -> Result<String, ProviderError> {
        self.attempts.fetch_add(1, Ordering::Relaxed);
        let response = self
            .client
            .post(self.endpoint.clone())
            .bearer_auth(key)
            .json(body)
            .send()
            .await
            .map_err(|e| ProviderError::Transient(describe(&e)))?;

        let status = response.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(ProviderError::Auth(format!("upstream answered {status}")));
        }
        if status.is_server_error()
            || status == reqwest::StatusCode::TOO_MANY_REQUESTS
            || status == reqwest::StatusCode::REQUEST_TIMEOUT
        {
            return Err(ProviderError::Transient(format!("upstream answered {status}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Rejected(format!("upstream answered {status}")));
        }

        let text = response
            .text()
            .await
            .map_err(|e| ProviderError::Transient(describe(&e)))?;
        tracing::debug!(model = %self.model, bytes = text.len(), "provider response received");
        completion_text(&text).ok_or(ProviderError::Envelope { raw: text })
    }
}

fn describe(e: &reqwest::Error) -> String {
    if e.is_timeout() {
        "request timed out".to_string()
    } else if e.is_connect() {
        format!("connection failed: {e}")
    } else {
        e.to_string()
    }
}

/// `choices[0].message.content` of a chat-completions response body.
fn completion_text(body: &str) -> Option<String> {
    let value: Value = serde_json::from_str(body).ok()?;
    value
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

#[async_trait]
impl CompletionProvider for HttpLlmProvider {
    async fn complete(&self, version: PromptVersion, draft: &ReportDraft) -> Result<String, ProviderError> {
        let key = std::env::var(&self.api_key_ref).map_err(|_| {
            ProviderError::Auth(format!("environment variable `{}` is not set", self.api_key_ref))
        })?;
        let body = ChatCompletionRequest::for_draft(&self.model, version, draft);
        tracing::debug!(
            endpoint = %self.endpoint,
            request = %serde_json::to_string(&body).unwrap_or_default(),
            "sending chat completion"
        );

        let mut last = String::new();
        for attempt in 0..=self.retry.max_retries {
            if attempt > 0 {
                tokio::time::sleep(self.retry.delay(attempt - 1)).await;
            }
            match self.send_once(&body, &key).await {
                Err(ProviderError::Transient(reason)) => {
                    tracing::warn!(attempt = attempt + 1, %reason, "transient provider failure");
                    last = reason;
                }
                other => return other,
            }
        }
        Err(ProviderError::Transient(format!(
            "gave up after {} attempts: {last}",
            self.retry.max_retries + 1
        )))
    }

    fn attempts_made(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_stays_in_band() {
        let p = RetryPolicy {
            max_retries: 3,
            base: Duration::from_secs(1),
        };
        assert_eq!(p.ceiling(0), Duration::from_secs(1));
        assert_eq!(p.ceiling(1), Duration::from_secs(2));
        assert_eq!(p.ceiling(2), Duration::from_secs(4));
        for retry in 0..3 {
            for _ in 0..50 {
                let d = p.delay(retry);
                assert!(d >= p.ceiling(retry) / 2 && d <= p.ceiling(retry), "{d:?}");
            }
        }
    }

    #[test]
    fn envelope_extraction() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"{\"tasks\": []}"}}]}"#;
        assert_eq!(completion_text(body).as_deref(), Some(r#"{"tasks": []}"#));
        assert_eq!(completion_text(r#"{"error":"x"}"#), None);
        assert_eq!(completion_text("not json"), None);
    }

    #[test]
    fn request_body_shape() {
        let draft = ReportDraft::new("- did x y z", "s", "r");
        let body = ChatCompletionRequest::for_draft("gemini-2.0-flash", PromptVersion::V2, &draft);
        let json = serde_json::to_value(&body).unwrap();
        assert_eq!(json["temperature"], 0.0);
        assert_eq!(json["messages"][0]["role"], "system");
        assert_eq!(json["messages"][0]["content"], system_prompt(PromptVersion::V2));
        assert_eq!(json["messages"][1]["role"], "user");
        assert_eq!(json["messages"][1]["content"], "- did x y z");
    }
}
