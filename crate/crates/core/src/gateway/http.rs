use std::time::Duration;

use async_trait::async_trait;
use base64::Engine as _;
use reqwest::header::{HeaderMap, RETRY_AFTER};
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::backend::{sniff_media_type, Backend, BackendError, ChatRequest, ImagePayload, ImageRequest};
use super::{ApiKey, GatewayConfig};

/// OpenAI-compatible JSON-over-HTTP backend: `POST {base}/chat/completions`
/// and `POST {base}/images/generations`.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::Client,
    base_url: String,
    api_key: ApiKey,
}

impl HttpBackend {
    pub fn new(config: &GatewayConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            base_url: config.base_url.trim_end_matches('/').to_string(),
            api_key: config.api_key.clone(),
        })
    }

    async fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        let resp = self
            .client
            .post(&url)
            .bearer_auth(self.api_key.expose())
            .json(body)
            .send()
            .await
            .map_err(|e| BackendError::Transport(self.api_key.redact(&without_url(e).to_string())))?;
        let status = resp.status();
        let headers = resp.headers().clone();
        let text = resp
            .text()
            .await
            .map_err(|e| BackendError::Transport(without_url(e).to_string()))?;
        if !status.is_success() {
            return Err(classify(status, &headers, &self.api_key.redact(&text)));
        }
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Protocol(format!("response is not JSON: {e}")))
    }
}

fn without_url(e: reqwest::Error) -> reqwest::Error {
    e.without_url()
}

fn retry_after(headers: &HeaderMap) -> Option<Duration> {
    headers
        .get(RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v["error"]["message"].as_str().map(str::to_string))
        .unwrap_or_else(|| body.chars().take(300).collect())
}

fn classify(status: StatusCode, headers: &HeaderMap, body: &str) -> BackendError {
    let message = error_message(body);
    match status {
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => BackendError::Auth(message),
        StatusCode::TOO_MANY_REQUESTS => BackendError::RateLimited {
            retry_after: retry_after(headers),
        },
        StatusCode::BAD_REQUEST if body.contains("content_policy_violation") => {
            BackendError::ContentRejected(message)
        }
        _ => BackendError::Status {
            code: status.as_u16(),
            body: message,
        },
    }
}

#[async_trait]
impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.base_url)
    }

    async fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let mut body = json!({
            "model": req.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
        });
        if req.json_mode {
            body["response_format"] = json!({"type": "json_object"});
        }
        let v = self.post("/chat/completions", &body).await?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))
    }

    async fn image(&self, req: &ImageRequest) -> Result<ImagePayload, BackendError> {
        let body = json!({
            "model": req.model,
            "prompt": req.prompt,
            "n": 1,
            "size": req.size,
            "quality": req.quality,
            "response_format": "b64_json",
        });
        let v = self.post("/images/generations", &body).await?;
        let item = &v["data"][0];
        if let Some(b64) = item["b64_json"].as_str() {
            let data = base64::engine::general_purpose::STANDARD
                .decode(b64)
                .map_err(|e| BackendError::Protocol(format!("bad base64 image: {e}")))?;
            let media_type = sniff_media_type(&data).to_string();
            return Ok(ImagePayload::Bytes { data, media_type });
        }
        if let Some(url) = item["url"].as_str() {
            return Ok(ImagePayload::Url(url.to_string()));
        }
        Err(BackendError::Protocol("missing data[0].b64_json or data[0].url".into()))
    }

    async fn download(&self, url: &str) -> Result<(Vec<u8>, String), BackendError> {
        let resp = self
            .client
            .get(url)
            .send()
            .await
            .map_err(|e| BackendError::Transport(without_url(e).to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BackendError::Status {
                code: status.as_u16(),
                body: "image download failed".into(),
            });
        }
        let header_type = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let data = resp
            .bytes()
            .await
            .map_err(|e| BackendError::Transport(without_url(e).to_string()))?
            .to_vec();
        let media_type = header_type
            .filter(|t| t.starts_with("image/"))
            .unwrap_or_else(|| sniff_media_type(&data).to_string());
        Ok((data, media_type))
    }
}
