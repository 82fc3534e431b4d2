use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;

use super::backend::{Backend, BackendError, ChatRequest, ImagePayload, ImageRequest};

/// Replays a fixed queue of outcomes and counts calls.
///
/// Once the chat queue is empty further chat calls fail with
/// [`BackendError::ScriptExhausted`]. Image calls fall back to the default
/// image when one is set.
type Queue<T> = Mutex<VecDeque<Result<T, BackendError>>>;

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    chat: Queue<String>,
    images: Queue<ImagePayload>,
    downloads: Queue<(Vec<u8>, String)>,
    default_image: Option<ImagePayload>,
    delay: Option<Duration>,
    chat_calls: AtomicUsize,
    image_calls: AtomicUsize,
    chat_prompts: Mutex<Vec<String>>,
    image_prompts: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_chat(self, outcome: Result<String, BackendError>) -> Self {
        self.chat.lock().expect("lock").push_back(outcome);
        self
    }

    pub fn with_image(self, outcome: Result<ImagePayload, BackendError>) -> Self {
        self.images.lock().expect("lock").push_back(outcome);
        self
    }

    pub fn with_download(self, outcome: Result<(Vec<u8>, String), BackendError>) -> Self {
        self.downloads.lock().expect("lock").push_back(outcome);
        self
    }

    pub fn with_default_image(mut self, payload: ImagePayload) -> Self {
        self.default_image = Some(payload);
        self
    }

    /// Sleeps before answering each call.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn chat_calls(&self) -> usize {
        self.chat_calls.load(Ordering::SeqCst)
    }

    pub fn image_calls(&self) -> usize {
        self.image_calls.load(Ordering::SeqCst)
    }

    pub fn chat_prompts(&self) -> Vec<String> {
        self.chat_prompts.lock().expect("lock").clone()
    }

    pub fn image_prompts(&self) -> Vec<String> {
        self.image_prompts.lock().expect("lock").clone()
    }

    async fn pause(&self) {
        if let Some(d) = self.delay {
            tokio::time::sleep(d).await;
        }
    }
}

#[async_trait]
impl Backend for ScriptedBackend {
    fn id(&self) -> String {
        "scripted".to_string()
    }

    async fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        self.chat_prompts.lock().expect("lock").push(req.prompt.clone());
        let next = self.chat.lock().expect("lock").pop_front();
        self.pause().await;
        next.unwrap_or(Err(BackendError::ScriptExhausted))
    }

    async fn image(&self, req: &ImageRequest) -> Result<ImagePayload, BackendError> {
        self.image_calls.fetch_add(1, Ordering::SeqCst);
        self.image_prompts.lock().expect("lock").push(req.prompt.clone());
        let next = self.images.lock().expect("lock").pop_front();
        self.pause().await;
        match next {
            Some(outcome) => outcome,
            None => self.default_image.clone().ok_or(BackendError::ScriptExhausted),
        }
    }

    async fn download(&self, _url: &str) -> Result<(Vec<u8>, String), BackendError> {
        self.downloads
            .lock()
            .expect("lock")
            .pop_front()
            .unwrap_or(Err(BackendError::ScriptExhausted))
    }
}
