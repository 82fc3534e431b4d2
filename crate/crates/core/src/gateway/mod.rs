//! Access to chat-completion and image-generation backends.
//!
//! [`Gateway`] owns the retry policy and configuration; a [`Backend`] does
//! one call. Backends: [`HttpBackend`] (JSON over HTTP), [`ScriptedBackend`]
//! and [`SyntheticBackend`] for tests and offline runs, and
//! [`CassetteBackend`] for record/replay.

mod backend;
mod cassette;
mod http;
mod scripted;
mod synthetic;

use std::fmt;
use std::future::Future;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{sniff_media_type, Backend, BackendError, ChatRequest, ImagePayload, ImageRequest};
pub use cassette::{record_replay, request_hash, CassetteBackend, CassetteEntry, CassetteError, CassetteMode};
pub use http::HttpBackend;
pub use scripted::ScriptedBackend;
pub use synthetic::{SyntheticBackend, PLACEHOLDER_PNG};

use crate::prompt::RenderedPrompt;

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_CHAT_MODEL: &str = "gpt-4";
pub const DEFAULT_IMAGE_MODEL: &str = "dall-e-3";
pub const MAX_RETRIES_LIMIT: u32 = 5;
const MAX_BACKOFF: Duration = Duration::from_secs(60);

/// Secret that never prints.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Replaces every occurrence of the key in `text`.
    pub fn redact(&self, text: &str) -> String {
        if self.0.is_empty() {
            text.to_string()
        } else {
            text.replace(&self.0, "[redacted]")
        }
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey([redacted])")
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub base_url: String,
    pub api_key: ApiKey,
    pub chat_model: String,
    pub image_model: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub temperature: f32,
    pub json_mode: bool,
    pub image_size: String,
    pub image_quality: String,
    /// First backoff ceiling; doubles per retry, full jitter.
    pub backoff_base: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.to_string(),
            api_key: ApiKey::default(),
            chat_model: DEFAULT_CHAT_MODEL.to_string(),
            image_model: DEFAULT_IMAGE_MODEL.to_string(),
            timeout: Duration::from_secs(120),
            max_retries: 2,
            temperature: 0.8,
            json_mode: true,
            image_size: "1024x1024".to_string(),
            image_quality: "standard".to_string(),
            backoff_base: Duration::from_secs(1),
        }
    }
}

impl GatewayConfig {
    /// Defaults overridden by `FAIRYLAND_API_KEY`, `FAIRYLAND_BASE_URL`,
    /// `FAIRYLAND_CHAT_MODEL` and `FAIRYLAND_IMAGE_MODEL`.
    pub fn from_env() -> Self {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Self {
        let mut cfg = Self::default();
        let get = |k: &str| lookup(k).filter(|v| !v.trim().is_empty());
        if let Some(v) = get("FAIRYLAND_API_KEY") {
            cfg.api_key = ApiKey::new(v.trim());
        }
        if let Some(v) = get("FAIRYLAND_BASE_URL") {
            cfg.base_url = v.trim().trim_end_matches('/').to_string();
        }
        if let Some(v) = get("FAIRYLAND_CHAT_MODEL") {
            cfg.chat_model = v.trim().to_string();
        }
        if let Some(v) = get("FAIRYLAND_IMAGE_MODEL") {
            cfg.image_model = v.trim().to_string();
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout.is_zero() {
            return Err(GatewayError::InvalidConfig("timeout must be positive".into()));
        }
        if self.max_retries > MAX_RETRIES_LIMIT {
            return Err(GatewayError::InvalidConfig(format!(
                "max_retries must be at most {MAX_RETRIES_LIMIT}"
            )));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidConfig(
                "temperature must be within [0, 2]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("invalid gateway configuration: {0}")]
    InvalidConfig(String),
    #[error("image prompt is empty")]
    EmptyPrompt,
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited {
        attempts: u32,
        retry_after: Option<Duration>,
    },
    #[error("content rejected for prompt {prompt:?}: {reason}")]
    ContentRejected { prompt: String, reason: String },
    #[error("no cassette entry for request {hash}")]
    CassetteMiss { hash: String },
    #[error("mock script exhausted")]
    ScriptExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionExchange {
    pub rendered_prompt: String,
    pub response_text: String,
    pub attempt: u32,
    pub backend_id: String,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageSource {
    Bytes(Vec<u8>),
    Url(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageArtifact {
    pub prompt: String,
    pub source: ImageSource,
    pub media_type: String,
}

impl ImageArtifact {
    pub fn payload(&self) -> Option<&[u8]> {
        match &self.source {
            ImageSource::Bytes(b) => Some(b),
            ImageSource::Url(_) => None,
        }
    }
}

/// A backend plus the policy for calling it. Cheap to clone and share.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    config: GatewayConfig,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.id())
            .field("config", &self.config)
            .finish()
    }
}

/// Delay before retry number `retry` (1-based): uniform in
/// `[0, base * 2^(retry-1)]`, capped.
pub fn backoff_delay(base: Duration, retry: u32, rng: &mut impl Rng) -> Duration {
    let ceiling = base
        .checked_mul(1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX))
        .unwrap_or(MAX_BACKOFF)
        .min(MAX_BACKOFF);
    if ceiling.is_zero() {
        return Duration::ZERO;
    }
    Duration::from_secs_f64(rng.gen_range(0.0..=ceiling.as_secs_f64()))
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(Self { backend, config })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    fn map_final(&self, err: BackendError, attempts: u32, prompt: &str) -> GatewayError {
        let key = &self.config.api_key;
        match err {
            BackendError::Auth(m) => GatewayError::Auth(key.redact(&m)),
            BackendError::RateLimited { retry_after } => GatewayError::RateLimited {
                attempts,
                retry_after,
            },
            BackendError::ContentRejected(reason) => GatewayError::ContentRejected {
                prompt: prompt.to_string(),
                reason: key.redact(&reason),
            },
            BackendError::CassetteMiss { hash } => GatewayError::CassetteMiss { hash },
            BackendError::ScriptExhausted => GatewayError::ScriptExhausted,
            other => GatewayError::Transport {
                attempts,
                message: key.redact(&other.to_string()),
            },
        }
    }

    async fn with_retries<T, F, Fut>(&self, prompt: &str, mut call: F) -> Result<(T, u32), GatewayError>
    where
        F: FnMut() -> Fut,
        Fut: Future<Output = Result<T, BackendError>>,
    {
        let max_attempts = self.config.max_retries + 1;
        let mut attempt = 1;
        loop {
            let outcome = match tokio::time::timeout(self.config.timeout, call()).await {
                Ok(r) => r,
                Err(_) => Err(BackendError::Transport(format!(
                    "timed out after {:?}",
                    self.config.timeout
                ))),
            };
            match outcome {
                Ok(v) => return Ok((v, attempt)),
                Err(e) if e.is_retryable() && attempt < max_attempts => {
                    let delay = match &e {
                        BackendError::RateLimited {
                            retry_after: Some(after),
                        } => (*after).min(MAX_BACKOFF),
                        _ => backoff_delay(self.config.backoff_base, attempt, &mut rand::thread_rng()),
                    };
                    tracing::warn!(
                        backend = %self.backend.id(),
                        attempt,
                        error = %self.config.api_key.redact(&e.to_string()),
                        ?delay,
                        "backend call failed; retrying"
                    );
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
                Err(e) => return Err(self.map_final(e, attempt, prompt)),
            }
        }
    }

    pub async fn complete(&self, prompt: &RenderedPrompt) -> Result<CompletionExchange, GatewayError> {
        let req = ChatRequest {
            model: self.config.chat_model.clone(),
            prompt: prompt.text.clone(),
            temperature: self.config.temperature,
            json_mode: self.config.json_mode,
        };
        let started = Instant::now();
        let (text, attempt) = self
            .with_retries(&prompt.text, || self.backend.chat(&req))
            .await?;
        Ok(CompletionExchange {
            rendered_prompt: prompt.text.clone(),
            response_text: text,
            attempt,
            backend_id: self.backend.id(),
            elapsed: started.elapsed(),
        })
    }

    pub async fn generate_image(&self, prompt: &str) -> Result<ImageArtifact, GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let req = ImageRequest {
            model: self.config.image_model.clone(),
            prompt: prompt.to_string(),
            size: self.config.image_size.clone(),
            quality: self.config.image_quality.clone(),
        };
        let (payload, _) = self.with_retries(prompt, || self.backend.image(&req)).await?;
        Ok(match payload {
            ImagePayload::Bytes { data, media_type } => ImageArtifact {
                prompt: prompt.to_string(),
                source: ImageSource::Bytes(data),
                media_type,
            },
            ImagePayload::Url(url) => ImageArtifact {
                prompt: prompt.to_string(),
                source: ImageSource::Url(url),
                media_type: "application/octet-stream".to_string(),
            },
        })
    }

    /// Replaces a URL source with downloaded bytes.
    pub async fn materialize(&self, artifact: ImageArtifact) -> Result<ImageArtifact, GatewayError> {
        match &artifact.source {
            ImageSource::Bytes(_) => Ok(artifact),
            ImageSource::Url(url) => {
                let ((data, media_type), _) = self
                    .with_retries(&artifact.prompt, || self.backend.download(url))
                    .await?;
                Ok(ImageArtifact {
                    prompt: artifact.prompt,
                    source: ImageSource::Bytes(data),
                    media_type,
                })
            }
        }
    }
}
