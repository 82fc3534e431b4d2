use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fairyland_core::{Gender, PromptVersionId};

use crate::backend::BackendSpec;

#[derive(Debug, Parser)]
#[command(name = "fairyland", version, about = "Generate, inspect and serve personalized fairytale books")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a book and save it to the library.
    Generate(GenerateArgs),
    /// Lint a book.json file and print its report.
    Validate(ValidateArgs),
    /// Print a rendered prompt version.
    RenderPrompt(RenderArgs),
    /// Prompt version catalogue.
    Prompts {
        #[command(subcommand)]
        command: PromptsCommand,
    },
    /// Run the HTTP API.
    Serve(ServeArgs),
    /// Browse the library.
    Library {
        #[command(subcommand)]
        command: LibraryCommand,
    },
}

pub const DEFAULT_ELEMENT_2: &str = "magical";
pub const DEFAULT_STYLE: &str = "watercolor";

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// mock, live, or replay:<cassette>
    #[arg(long, default_value = "mock")]
    pub backend: BackendSpec,
    /// Append every backend exchange to this cassette.
    #[arg(long, value_name = "CASSETTE")]
    pub record: Option<PathBuf>,
    /// JSON array of canned chat responses for the mock backend.
    #[arg(long, value_name = "FILE")]
    pub mock_script: Option<PathBuf>,
    #[arg(long, default_value_t = fairyland_core::pipeline::DEFAULT_MAX_STORY_ATTEMPTS)]
    pub max_attempts: u32,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub age: u32,
    #[arg(long)]
    pub gender: Gender,
    /// Main theme (element_1).
    #[arg(long, visible_alias = "element1")]
    pub theme: String,
    /// Plot ingredient (element_2).
    #[arg(long, default_value = DEFAULT_ELEMENT_2)]
    pub element2: String,
    #[arg(long, default_value = DEFAULT_STYLE)]
    pub style: String,
    #[arg(long, default_value = fairyland_core::request::DEFAULT_LANGUAGE)]
    pub language: String,
    /// Target story length in words.
    #[arg(long, visible_alias = "words-length", default_value_t = fairyland_core::request::DEFAULT_WORDS_LENGTH)]
    pub length: u32,
    #[arg(long, visible_alias = "image-specs", default_value = fairyland_core::request::DEFAULT_IMAGE_SPECS)]
    pub specs: String,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Library directory (defaults to FAIRYLAND_LIBRARY_DIR or ./library).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub book: PathBuf,
    /// Story request JSON supplying length, style and specs targets.
    #[arg(long)]
    pub request: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long = "version", value_name = "VERSION")]
    pub prompt_version: PromptVersionId,
    #[arg(long)]
    pub age: Option<u32>,
    #[arg(long)]
    pub gender: Option<Gender>,
    #[arg(long, visible_alias = "element1")]
    pub theme: Option<String>,
    #[arg(long)]
    pub element2: Option<String>,
    #[arg(long)]
    pub style: Option<String>,
    #[arg(long)]
    pub language: Option<String>,
    #[arg(long, visible_alias = "words-length")]
    pub length: Option<u32>,
    #[arg(long, visible_alias = "image-specs")]
    pub specs: Option<String>,
    /// Nonce to embed; a fresh one is used when absent.
    #[arg(long)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum PromptsCommand {
    /// List the prompt versions with their change notes.
    List {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Overrides FAIRYLAND_LISTEN.
    #[arg(long)]
    pub listen: Option<SocketAddr>,
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long, default_value_t = fairyland_server::jobs::DEFAULT_WORKERS)]
    pub workers: usize,
    /// Options file (defaults to FAIRYLAND_OPTIONS or ./options.json).
    #[arg(long)]
    pub options: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum LibraryCommand {
    List {
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long)]
        language: Option<String>,
        #[arg(long)]
        age_min: Option<u32>,
        #[arg(long)]
        age_max: Option<u32>,
        #[arg(long, default_value_t = 0)]
        offset: usize,
        #[arg(long, default_value_t = 100)]
        limit: usize,
        #[arg(long)]
        json: bool,
    },
    Show {
        id: String,
        #[arg(long)]
        library: Option<PathBuf>,
    },
    Delete {
        id: String,
        #[arg(long)]
        library: Option<PathBuf>,
    },
}
