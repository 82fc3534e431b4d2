//! Request to finished book: render the final prompt, complete, parse, lint,
//! retry on hard failures, then generate the five images.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use futures::{StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, ImageArtifact};
use crate::lint::{lint_book, LintTargets, ValidationReport};
use crate::prompt::{self, render, Clock, NonceSource, PromptVersionId, RenderedPrompt, SystemClock};
use crate::request::{RequestErrors, StoryRequest};
use crate::store::{LibraryStore, StoreError};
use crate::story::{parse_story_response, ParseError, StoryBook};

pub const DEFAULT_MAX_STORY_ATTEMPTS: u32 = 3;
pub const DEFAULT_IMAGE_CONCURRENCY: usize = 2;
pub const STORY_PROMPT_VERSION: PromptVersionId = PromptVersionId::P5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ImageSlot {
    #[serde(rename = "cover")]
    Cover,
    Image1,
    Image2,
    Image3,
    Image4,
}

impl ImageSlot {
    pub const ALL: [ImageSlot; 5] = [
        ImageSlot::Cover,
        ImageSlot::Image1,
        ImageSlot::Image2,
        ImageSlot::Image3,
        ImageSlot::Image4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ImageSlot::Cover => "cover",
            ImageSlot::Image1 => "Image1",
            ImageSlot::Image2 => "Image2",
            ImageSlot::Image3 => "Image3",
            ImageSlot::Image4 => "Image4",
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            ImageSlot::Cover => "cover",
            ImageSlot::Image1 => "image1",
            ImageSlot::Image2 => "image2",
            ImageSlot::Image3 => "image3",
            ImageSlot::Image4 => "image4",
        }
    }

    /// The book text this slot is drawn from.
    pub fn prompt_in(self, book: &StoryBook) -> Option<&str> {
        match self {
            ImageSlot::Cover => Some(book.book_cover_description.as_str()),
            other => book.scene(other.as_str()),
        }
    }
}

impl fmt::Display for ImageSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown image slot `{0}`")]
pub struct UnknownSlot(pub String);

impl FromStr for ImageSlot {
    type Err = UnknownSlot;

    /// Case-insensitive; `book_cover` is accepted for the cover.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "cover" | "book_cover" => Ok(ImageSlot::Cover),
            _ => ImageSlot::ALL
                .into_iter()
                .find(|slot| slot.file_stem() == lower)
                .ok_or_else(|| UnknownSlot(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    GeneratingStory,
    Validating,
    GeneratingImages,
    Done,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::GeneratingStory => "generating_story",
            Stage::Validating => "validating",
            Stage::GeneratingImages => "generating_images",
            Stage::Done => "done",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub stage: Stage,
    pub attempt: u32,
}

pub type ProgressSink = Arc<dyn Fn(ProgressEvent) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regeneration {
    pub slots: Vec<ImageSlot>,
    pub image_backend: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub prompt_version: PromptVersionId,
    /// sha256 of the accepted prompt with its nonce replaced by the placeholder.
    pub prompt_hash: String,
    pub chat_backend: String,
    pub image_backend: String,
    pub attempts: u32,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub regenerations: Vec<Regeneration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedBook {
    pub id: String,
    pub request: StoryRequest,
    pub book: StoryBook,
    pub images: BTreeMap<ImageSlot, ImageArtifact>,
    pub report: ValidationReport,
    pub provenance: Provenance,
}

/// Why one story attempt was thrown away.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttemptFailure {
    Parse { error: ParseError },
    Lint { report: ValidationReport },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid request: {0}")]
    InvalidRequest(RequestErrors),
    #[error("prompt rendering failed: {0}")]
    Prompt(#[from] prompt::PromptError),
    #[error("story rejected after {attempts} attempt(s)")]
    StoryRejected {
        attempts: u32,
        /// Lint report of the last attempt that parsed, if any did.
        report: Option<ValidationReport>,
        lineage: Vec<AttemptFailure>,
    },
    #[error("{stage}: {source}")]
    Gateway { stage: Stage, source: GatewayError },
    #[error("unknown book {0}")]
    UnknownBook(String),
    #[error("store: {0}")]
    Store(StoreError),
}

impl From<StoreError> for PipelineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownBook(id) => PipelineError::UnknownBook(id),
            other => PipelineError::Store(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelinePolicy {
    pub max_story_attempts: u32,
    pub image_concurrency: usize,
}

impl Default for PipelinePolicy {
    fn default() -> Self {
        Self {
            max_story_attempts: DEFAULT_MAX_STORY_ATTEMPTS,
            image_concurrency: DEFAULT_IMAGE_CONCURRENCY,
        }
    }
}

/// A dry-run prompt plus the byte range of its nonce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DryRun {
    pub prompt: RenderedPrompt,
    pub nonce_span: Option<Range<usize>>,
}

impl DryRun {
    /// The prompt with the nonce shown as `{{timestamp}}`.
    pub fn marked(&self) -> String {
        prompt::normalize_nonce(&self.prompt.text)
    }
}

pub fn prompt_hash(text: &str) -> String {
    hex::encode(Sha256::digest(prompt::normalize_nonce(text).as_bytes()))
}

pub fn new_book_id() -> String {
    hex::encode(rand::random::<[u8; 16]>())
}

fn validated(req: &StoryRequest) -> Result<StoryRequest, PipelineError> {
    req.validated().map_err(PipelineError::InvalidRequest)
}

/// Renders the prompt `generate_book` would send. No network traffic.
pub fn dry_run(req: &StoryRequest, clock: &dyn Clock) -> Result<DryRun, PipelineError> {
    let req = validated(req)?;
    let vars = req.to_variables(Some(prompt::fresh_nonce(clock)));
    let prompt = render(STORY_PROMPT_VERSION, &vars)?;
    let nonce_span = prompt::nonce_span(&prompt.text);
    Ok(DryRun { prompt, nonce_span })
}

#[derive(Clone)]
pub struct Pipeline {
    chat: Gateway,
    images: Gateway,
    policy: PipelinePolicy,
    clock: Arc<dyn Clock>,
    nonces: Arc<NonceSource>,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("chat", &self.chat)
            .field("images", &self.images)
            .field("policy", &self.policy)
            .finish()
    }
}

impl Pipeline {
    pub fn new(gateway: Gateway, policy: PipelinePolicy) -> Self {
        Self {
            images: gateway.clone(),
            chat: gateway,
            policy,
            clock: Arc::new(SystemClock),
            nonces: Arc::new(NonceSource::new()),
        }
    }

    /// Uses a separate gateway for image calls.
    pub fn with_image_gateway(mut self, gateway: Gateway) -> Self {
        self.images = gateway;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn policy(&self) -> PipelinePolicy {
        self.policy
    }

    pub fn chat_gateway(&self) -> &Gateway {
        &self.chat
    }

    pub fn image_gateway(&self) -> &Gateway {
        &self.images
    }

    pub async fn generate_book(
        &self,
        req: &StoryRequest,
        progress: Option<&ProgressSink>,
    ) -> Result<GeneratedBook, PipelineError> {
        let req = validated(req)?;
        let emit = |stage, attempt| {
            if let Some(sink) = progress {
                sink(ProgressEvent { stage, attempt });
            }
        };
        let targets = LintTargets::from(&req);
        let max = self.policy.max_story_attempts.max(1);
        let mut lineage = Vec::new();
        let mut last_report = None;

        for attempt in 1..=max {
            emit(Stage::GeneratingStory, attempt);
            let vars = req.to_variables(Some(self.nonces.fresh_nonce(self.clock.as_ref())));
            let rendered = render(STORY_PROMPT_VERSION, &vars)?;
            let exchange = self
                .chat
                .complete(&rendered)
                .await
                .map_err(|source| PipelineError::Gateway {
                    stage: Stage::GeneratingStory,
                    source,
                })?;

            emit(Stage::Validating, attempt);
            let book = match parse_story_response(exchange.response_text.as_bytes()) {
                Ok(book) => book,
                Err(error) => {
                    tracing::info!(attempt, %error, "story attempt failed to parse");
                    lineage.push(AttemptFailure::Parse { error });
                    continue;
                }
            };
            let report = lint_book(&book, &targets);
            if report.has_errors() {
                tracing::info!(attempt, codes = ?report.codes(), "story attempt failed lint");
                last_report = Some(report.clone());
                lineage.push(AttemptFailure::Lint { report });
                continue;
            }

            emit(Stage::GeneratingImages, attempt);
            let images = self.render_images(&book, &ImageSlot::ALL).await?;
            emit(Stage::Done, attempt);
            return Ok(GeneratedBook {
                id: new_book_id(),
                request: req,
                book,
                images,
                report,
                provenance: Provenance {
                    prompt_version: STORY_PROMPT_VERSION,
                    prompt_hash: prompt_hash(&rendered.text),
                    chat_backend: exchange.backend_id,
                    image_backend: self.images.backend_id(),
                    attempts: attempt,
                    created_at: Utc::now(),
                    regenerations: Vec::new(),
                },
            });
        }

        Err(PipelineError::StoryRejected {
            attempts: max,
            report: last_report,
            lineage,
        })
    }

    async fn render_images(
        &self,
        book: &StoryBook,
        slots: &[ImageSlot],
    ) -> Result<BTreeMap<ImageSlot, ImageArtifact>, PipelineError> {
        let cap = self.policy.image_concurrency.max(1);
        let gateway = &self.images;
        futures::stream::iter(slots.iter().copied())
            .map(|slot| async move {
                let text = slot.prompt_in(book).unwrap_or_default();
                let artifact = gateway.generate_image(text).await?;
                let artifact = gateway.materialize(artifact).await?;
                Ok::<_, GatewayError>((slot, artifact))
            })
            .buffered(cap)
            .try_collect()
            .await
            .map_err(|source| PipelineError::Gateway {
                stage: Stage::GeneratingImages,
                source,
            })
    }

    /// Redraws the selected images of a stored book and writes them back.
    /// Story and report stay as they were.
    pub async fn regenerate_images(
        &self,
        store: &LibraryStore,
        book_id: &str,
        slots: &[ImageSlot],
    ) -> Result<GeneratedBook, PipelineError> {
        let mut book = store.get(book_id)?;
        let mut wanted: Vec<ImageSlot> = slots.to_vec();
        wanted.sort();
        wanted.dedup();
        let fresh = self.render_images(&book.book, &wanted).await?;
        book.images.extend(fresh);
        book.provenance.regenerations.push(Regeneration {
            slots: wanted,
            image_backend: self.images.backend_id(),
            at: Utc::now(),
        });
        store.update(&book)?;
        Ok(book)
    }
}
