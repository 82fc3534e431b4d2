//! Record/replay of backend traffic as JSON lines.
//!
//! Each line is `{hash, request_summary, response}`. The hash covers the
//! request kind, model and prompt, with the prompt's timestamp nonce
//! normalized so a replay matches regardless of the nonce it was sent with.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::backend::{Backend, BackendError, ChatRequest, ImagePayload, ImageRequest};
use crate::prompt::normalize_nonce;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CassetteMode {
    Record,
    Replay,
}

#[derive(Debug, Error)]
pub enum CassetteError {
    #[error("cassette {path} does not exist")]
    NotFound { path: PathBuf },
    #[error("record mode needs a backend to wrap")]
    NothingToRecord,
    #[error("cassette {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("cassette io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CassetteResponse {
    Chat {
        text: String,
    },
    Image {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data_b64: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        url: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        media_type: Option<String>,
    },
    Download {
        data_b64: String,
        media_type: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub hash: String,
    pub request_summary: String,
    pub response: CassetteResponse,
}

fn hash_parts(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

/// Stable key for a request. Chat prompts have their nonce normalized.
pub fn request_hash(kind: &str, model: &str, prompt: &str) -> String {
    match kind {
        "chat" => hash_parts(&[kind, model, &normalize_nonce(prompt)]),
        _ => hash_parts(&[kind, model, prompt]),
    }
}

fn summary(kind: &str, model: &str, prompt: &str) -> String {
    let normalized = normalize_nonce(prompt);
    let head: String = normalized.chars().take(80).collect();
    let ellipsis = if normalized.chars().count() > 80 { "..." } else { "" };
    format!("{kind} {model}: {head}{ellipsis}")
}

fn b64() -> base64::engine::GeneralPurpose {
    base64::engine::general_purpose::STANDARD
}

enum Mode {
    Record {
        inner: Arc<dyn Backend>,
        file: Mutex<File>,
    },
    Replay {
        entries: HashMap<String, CassetteResponse>,
    },
}

pub struct CassetteBackend {
    mode: Mode,
    path: PathBuf,
}

impl std::fmt::Debug for CassetteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CassetteBackend")
            .field("path", &self.path)
            .field(
                "mode",
                &match self.mode {
                    Mode::Record { .. } => "record",
                    Mode::Replay { .. } => "replay",
                },
            )
            .finish()
    }
}

/// Opens a cassette. Record mode wraps `inner` and appends every successful
/// exchange; replay mode serves responses by request hash.
pub fn record_replay(
    mode: CassetteMode,
    cassette: impl AsRef<Path>,
    inner: Option<Arc<dyn Backend>>,
) -> Result<CassetteBackend, CassetteError> {
    let path = cassette.as_ref().to_path_buf();
    match mode {
        CassetteMode::Record => {
            let inner = inner.ok_or(CassetteError::NothingToRecord)?;
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            let file = OpenOptions::new().create(true).append(true).open(&path)?;
            Ok(CassetteBackend {
                mode: Mode::Record {
                    inner,
                    file: Mutex::new(file),
                },
                path,
            })
        }
        CassetteMode::Replay => {
            let file = File::open(&path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => CassetteError::NotFound { path: path.clone() },
                _ => CassetteError::Io(e),
            })?;
            let mut entries = HashMap::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CassetteEntry =
                    serde_json::from_str(&line).map_err(|e| CassetteError::Corrupt {
                        path: path.clone(),
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                entries.insert(entry.hash, entry.response);
            }
            Ok(CassetteBackend {
                mode: Mode::Replay { entries },
                path,
            })
        }
    }
}

impl CassetteBackend {
    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(&self, entry: &CassetteEntry) -> Result<(), BackendError> {
        let Mode::Record { file, .. } = &self.mode else {
            return Ok(());
        };
        let mut line = serde_json::to_string(entry).expect("entry serializes");
        line.push('\n');
        let mut f = file.lock().expect("cassette lock");
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| BackendError::Transport(format!("cassette write failed: {e}")))
    }

    fn lookup(&self, hash: &str) -> Result<&CassetteResponse, BackendError> {
        match &self.mode {
            Mode::Replay { entries } => entries.get(hash).ok_or_else(|| BackendError::CassetteMiss {
                hash: hash.to_string(),
            }),
            Mode::Record { .. } => unreachable!("lookup is replay-only"),
        }
    }
}

#[async_trait]
impl Backend for CassetteBackend {
    fn id(&self) -> String {
        match &self.mode {
            Mode::Record { inner, .. } => inner.id(),
            Mode::Replay { .. } => "replay".to_string(),
        }
    }

    async fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let hash = request_hash("chat", &req.model, &req.prompt);
        match &self.mode {
            Mode::Record { inner, .. } => {
                let text = inner.chat(req).await?;
                self.append(&CassetteEntry {
                    hash,
                    request_summary: summary("chat", &req.model, &req.prompt),
                    response: CassetteResponse::Chat { text: text.clone() },
                })?;
                Ok(text)
            }
            Mode::Replay { .. } => match self.lookup(&hash)? {
                CassetteResponse::Chat { text } => Ok(text.clone()),
                _ => Err(BackendError::Protocol("cassette entry is not a chat response".into())),
            },
        }
    }

    async fn image(&self, req: &ImageRequest) -> Result<ImagePayload, BackendError> {
        let hash = request_hash("image", &req.model, &req.prompt);
        match &self.mode {
            Mode::Record { inner, .. } => {
                let payload = inner.image(req).await?;
                let response = match &payload {
                    ImagePayload::Bytes { data, media_type } => CassetteResponse::Image {
                        data_b64: Some(b64().encode(data)),
                        url: None,
                        media_type: Some(media_type.clone()),
                    },
                    ImagePayload::Url(url) => CassetteResponse::Image {
                        data_b64: None,
                        url: Some(url.clone()),
                        media_type: None,
                    },
                };
                self.append(&CassetteEntry {
                    hash,
                    request_summary: summary("image", &req.model, &req.prompt),
                    response,
                })?;
                Ok(payload)
            }
            Mode::Replay { .. } => match self.lookup(&hash)? {
                CassetteResponse::Image {
                    data_b64: Some(data),
                    media_type,
                    ..
                } => {
                    let data = b64()
                        .decode(data)
                        .map_err(|e| BackendError::Protocol(format!("bad cassette image: {e}")))?;
                    let media_type = media_type
                        .clone()
                        .unwrap_or_else(|| super::sniff_media_type(&data).to_string());
                    Ok(ImagePayload::Bytes { data, media_type })
                }
                CassetteResponse::Image { url: Some(url), .. } => Ok(ImagePayload::Url(url.clone())),
                _ => Err(BackendError::Protocol("cassette entry is not an image response".into())),
            },
        }
    }

    async fn download(&self, url: &str) -> Result<(Vec<u8>, String), BackendError> {
        let hash = request_hash("download", "", url);
        match &self.mode {
            Mode::Record { inner, .. } => {
                let (data, media_type) = inner.download(url).await?;
                self.append(&CassetteEntry {
                    hash,
                    request_summary: format!("download {url}"),
                    response: CassetteResponse::Download {
                        data_b64: b64().encode(&data),
                        media_type: media_type.clone(),
                    },
                })?;
                Ok((data, media_type))
            }
            Mode::Replay { .. } => match self.lookup(&hash)? {
                CassetteResponse::Download { data_b64, media_type } => {
                    let data = b64()
                        .decode(data_b64)
                        .map_err(|e| BackendError::Protocol(format!("bad cassette download: {e}")))?;
                    Ok((data, media_type.clone()))
                }
                _ => Err(BackendError::Protocol("cassette entry is not a download".into())),
            },
        }
    }
}
