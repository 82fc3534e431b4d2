//! Core of the fairyland book generator: versioned prompts, the story
//! contract, consistency linting, backend access, the generation pipeline
//! and the on-disk library.

pub mod gateway;
pub mod lint;
pub mod pipeline;
pub mod prompt;
pub mod request;
pub mod store;
pub mod story;

pub use lint::{
    lint_book, lint_scene_format, merge_reports, validate_consistency, validate_structure,
    LintTargets, SceneContext, Severity, ValidationReport, Violation, ViolationCode,
};
pub use prompt::{
    fresh_nonce, list_versions, render, Gender, PromptError, PromptVariables, PromptVersionId,
    RenderedPrompt,
};
pub use request::{FieldError, RequestErrors, StoryRequest};
pub use story::{
    parse_story_response, serialize_book, word_count, CharacterProfile, ParseError,
    ParseErrorKind, StoryBook,
};
pub use pipeline::{
    dry_run, DryRun, GeneratedBook, ImageSlot, Pipeline, PipelineError, PipelinePolicy,
    ProgressEvent, ProgressSink, Provenance, Stage,
};
pub use store::{BookMeta, LibraryStore, ListFilter, Page, StoreError};
