use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f32,
    pub json_mode: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub model: String,
    pub prompt: String,
    pub size: String,
    pub quality: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImagePayload {
    Bytes { data: Vec<u8>, media_type: String },
    Url(String),
}

/// Failure of a single backend call.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("backend returned status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("content rejected: {0}")]
    ContentRejected(String),
    #[error("no cassette entry for request {hash}")]
    CassetteMiss { hash: String },
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("mock script exhausted")]
    ScriptExhausted,
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_)
                | BackendError::Status { .. }
                | BackendError::RateLimited { .. }
                | BackendError::Protocol(_)
        )
    }
}

/// One chat-completion and image-generation provider.
#[async_trait]
pub trait Backend: Send + Sync {
    fn id(&self) -> String;

    async fn chat(&self, req: &ChatRequest) -> Result<String, BackendError>;

    async fn image(&self, req: &ImageRequest) -> Result<ImagePayload, BackendError>;

    /// Fetches an image the backend returned by URL.
    async fn download(&self, url: &str) -> Result<(Vec<u8>, String), BackendError>;
}

/// Sniffs the media type of common image encodings.
pub fn sniff_media_type(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        "image/png"
    } else if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        "image/jpeg"
    } else if bytes.len() >= 12 && &bytes[..4] == b"RIFF" && &bytes[8..12] == b"WEBP" {
        "image/webp"
    } else {
        "application/octet-stream"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sniffing() {
        assert_eq!(sniff_media_type(crate::gateway::PLACEHOLDER_PNG), "image/png");
        assert_eq!(sniff_media_type(&[0xff, 0xd8, 0xff, 0xe0]), "image/jpeg");
        assert_eq!(sniff_media_type(b"hello"), "application/octet-stream");
    }

    #[test]
    fn retry_classes() {
        assert!(BackendError::Transport("x".into()).is_retryable());
        assert!(BackendError::Status { code: 503, body: String::new() }.is_retryable());
        assert!(BackendError::RateLimited { retry_after: None }.is_retryable());
        assert!(!BackendError::Auth("x".into()).is_retryable());
        assert!(!BackendError::ContentRejected("x".into()).is_retryable());
        assert!(!BackendError::CassetteMiss { hash: "h".into() }.is_retryable());
        assert!(!BackendError::ScriptExhausted.is_retryable());
    }
}
