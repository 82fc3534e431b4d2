mod args;
mod backend;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use fairyland_core::gateway::{Gateway, GatewayConfig, GatewayError};
use fairyland_core::prompt::{fresh_nonce, SystemClock};
use fairyland_core::request::{DEFAULT_IMAGE_SPECS, DEFAULT_LANGUAGE, DEFAULT_WORDS_LENGTH};
use fairyland_core::{
    lint_book, list_versions, render, LibraryStore, LintTargets, ListFilter, Page, Pipeline,
    PipelineError, PipelinePolicy, PromptVariables, StoreError, StoryRequest,
};
use fairyland_server::{Credentials, Options, Server, ServerConfig};
use serde_json::json;

use args::{DEFAULT_ELEMENT_2, DEFAULT_STYLE, BackendArgs, Cli, Command, GenerateArgs, LibraryCommand, PromptsCommand, RenderArgs, ServeArgs, ValidateArgs};

const EXIT_SYSTEM: u8 = 1;
const EXIT_REJECTED: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    System(String),
    Rejected(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::System(_) => EXIT_SYSTEM,
            CliError::Rejected(_) => EXIT_REJECTED,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::System(m) | CliError::Rejected(m) => m,
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::System(e.to_string())
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(EXIT_SYSTEM);
        }
    };
    match runtime.block_on(run(cli.command)) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

async fn run(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Generate(a) => generate(a).await,
        Command::Validate(a) => validate(a),
        Command::RenderPrompt(a) => render_prompt(a),
        Command::Prompts { command: PromptsCommand::List { json } } => prompts_list(json),
        Command::Serve(a) => serve(a).await,
        Command::Library { command } => library(command),
    }
}

fn open_store(dir: Option<PathBuf>) -> Result<LibraryStore, CliError> {
    Ok(LibraryStore::open(dir.unwrap_or_else(LibraryStore::default_root))?)
}

fn pipeline(args: &BackendArgs) -> Result<Pipeline, CliError> {
    let config = GatewayConfig::from_env();
    let backend = backend::build(args, &config)?;
    let gateway = Gateway::new(backend, config).map_err(|e| CliError::System(e.to_string()))?;
    Ok(Pipeline::new(
        gateway,
        PipelinePolicy { max_story_attempts: args.max_attempts, ..PipelinePolicy::default() },
    ))
}

fn usage_from_fields(e: fairyland_core::RequestErrors) -> CliError {
    let fields: Vec<String> = e.0.iter().map(|f| format!("--{}: {}", flag_for(&f.field), f.message)).collect();
    CliError::Usage(format!("invalid request: {}", fields.join("; ")))
}

fn flag_for(field: &str) -> &str {
    match field {
        "element_1" => "theme",
        "element_2" => "element2",
        "words_length" => "length",
        "image_specs" => "specs",
        other => other,
    }
}

async fn generate(a: GenerateArgs) -> Result<u8, CliError> {
    let request = StoryRequest {
        age: a.age,
        gender: a.gender,
        element_1: a.theme,
        element_2: a.element2,
        style: a.style,
        language: a.language,
        words_length: a.length,
        image_specs: a.specs,
    }
    .validated()
    .map_err(usage_from_fields)?;
    if a.backend.max_attempts == 0 {
        return Err(CliError::Usage("--max-attempts must be at least 1".into()));
    }
    let store = open_store(a.out)?;
    let pipeline = pipeline(&a.backend)?;
    match pipeline.generate_book(&request, None).await {
        Ok(book) => {
            store.save(&book)?;
            if a.json {
                let out = json!({
                    "book_id": book.id,
                    "score": book.report.score,
                    "attempts": book.provenance.attempts,
                    "report": book.report,
                });
                println!("{}", serde_json::to_string_pretty(&out).expect("json"));
            } else {
                println!("book {}", book.id);
                println!("score {}", book.report.score);
                for v in &book.report.violations {
                    println!("  {} {}: {}", v.severity, v.code.name(), v.message);
                }
            }
            Ok(0)
        }
        Err(PipelineError::StoryRejected { attempts, report, lineage }) => {
            if a.json {
                let out = json!({"error": "story_rejected", "attempts": attempts, "report": report, "lineage": lineage});
                println!("{}", serde_json::to_string_pretty(&out).expect("json"));
            }
            Err(CliError::Rejected(format!("story rejected after {attempts} attempt(s)")))
        }
        Err(e @ PipelineError::Gateway { source: GatewayError::ContentRejected { .. }, .. }) => {
            Err(CliError::Rejected(e.to_string()))
        }
        Err(PipelineError::InvalidRequest(e)) => Err(usage_from_fields(e)),
        Err(e) => Err(CliError::System(e.to_string())),
    }
}

fn validate(a: ValidateArgs) -> Result<u8, CliError> {
    let raw = std::fs::read(&a.book).map_err(|e| CliError::System(format!("cannot read {}: {e}", a.book.display())))?;
    let targets = match &a.request {
        Some(path) => LintTargets::from(&read_request(path)?),
        None => LintTargets::default(),
    };
    let book = fairyland_core::parse_story_response(&raw).map_err(|e| CliError::System(e.to_string()))?;
    let report = lint_book(&book, &targets);
    println!("{}", report.to_json());
    Ok(if report.has_errors() { EXIT_REJECTED } else { 0 })
}

fn read_request(path: &Path) -> Result<StoryRequest, CliError> {
    let raw = std::fs::read(path).map_err(|e| CliError::System(format!("cannot read {}: {e}", path.display())))?;
    let value = serde_json::from_slice(&raw).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    StoryRequest::from_value(&value).map_err(|e| CliError::Usage(e.to_string()))
}

fn render_prompt(a: RenderArgs) -> Result<u8, CliError> {
    let vars = PromptVariables {
        words_length: Some(a.length.unwrap_or(DEFAULT_WORDS_LENGTH)),
        age: a.age,
        gender: a.gender,
        element_1: a.theme,
        element_2: Some(a.element2.unwrap_or_else(|| DEFAULT_ELEMENT_2.into())),
        style: Some(a.style.unwrap_or_else(|| DEFAULT_STYLE.into())),
        image_specs: Some(a.specs.unwrap_or_else(|| DEFAULT_IMAGE_SPECS.into())),
        language: Some(a.language.unwrap_or_else(|| DEFAULT_LANGUAGE.into())),
        timestamp: Some(a.timestamp.unwrap_or_else(|| fresh_nonce(&SystemClock))),
    };
    let prompt = render(a.prompt_version, &vars).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    out.write_all(prompt.text.as_bytes()).and_then(|_| out.flush()).map_err(|e| CliError::System(e.to_string()))?;
    Ok(0)
}

fn prompts_list(as_json: bool) -> Result<u8, CliError> {
    let versions = list_versions();
    if as_json {
        let rows: Vec<_> = versions.iter().map(|(id, note)| json!({"version": id.as_str(), "change_note": note})).collect();
        println!("{}", serde_json::to_string_pretty(&rows).expect("json"));
    } else {
        for (id, note) in versions {
            println!("{}\t{}", id.as_str(), note);
        }
    }
    Ok(0)
}

async fn serve(a: ServeArgs) -> Result<u8, CliError> {
    let options = match &a.options {
        Some(path) => Options::load(path),
        None => Options::from_env(),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let credentials = Credentials::from_env();
    if credentials.is_none() {
        tracing::warn!("FAIRYLAND_USER / FAIRYLAND_PASS_HASH not set; every login will fail");
    }
    let addr = match a.listen {
        Some(addr) => addr,
        None => fairyland_server::listen_addr_from_env().map_err(|e| CliError::Usage(format!("FAIRYLAND_LISTEN: {e}")))?,
    };
    let store = Arc::new(open_store(a.library)?);
    let pipeline = pipeline(&a.backend)?;
    let config = ServerConfig { credentials, workers: a.workers.max(1), options, ..ServerConfig::default() };
    let server = Server::new(config, pipeline, store);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::System(format!("cannot listen on {addr}: {e}")))?;
    let bound = listener.local_addr().map_err(|e| CliError::System(e.to_string()))?;
    println!("listening on http://{bound}");
    let _ = std::io::stdout().flush();
    server
        .run(listener, fairyland_server::shutdown_signal())
        .await
        .map_err(|e| CliError::System(e.to_string()))?;
    Ok(0)
}

fn library(command: LibraryCommand) -> Result<u8, CliError> {
    match command {
        LibraryCommand::List { library, language, age_min, age_max, offset, limit, json } => {
            let store = open_store(library)?;
            let age_range = match (age_min, age_max) {
                (None, None) => None,
                (lo, hi) => Some((lo.unwrap_or(0), hi.unwrap_or(u32::MAX))),
            };
            let metas = store
                .list(&ListFilter { language, age_range }, Page { offset, limit })
                .map_err(|e| match e {
                    StoreError::InvalidLimit(_) => CliError::Usage(e.to_string()),
                    other => other.into(),
                })?;
            if json {
                println!("{}", serde_json::to_string_pretty(&metas).expect("json"));
                return Ok(0);
            }
            if !metas.is_empty() {
                println!("{:<32}  {:<20}  {:<4}  {:>3}  {:>5}  TITLE", "ID", "CREATED", "LANG", "AGE", "SCORE");
            }
            for m in &metas {
                println!(
                    "{:<32}  {:<20}  {:<4}  {:>3}  {:>5.1}  {}",
                    m.id,
                    m.created_at.format("%Y-%m-%d %H:%M:%S"),
                    m.language,
                    m.age,
                    m.score,
                    m.title
                );
            }
            println!("{} book{}", metas.len(), if metas.len() == 1 { "" } else { "s" });
            Ok(0)
        }
        LibraryCommand::Show { id, library } => {
            let store = open_store(library)?;
            let book = store.get(&id)?;
            let out = json!({
                "meta": fairyland_core::BookMeta::of(&book),
                "book": book.book,
                "report": book.report,
                "provenance": book.provenance,
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
            Ok(0)
        }
        LibraryCommand::Delete { id, library } => {
            open_store(library)?.delete(&id)?;
            println!("deleted {id}");
            Ok(0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_convention() {
        assert_eq!(CliError::Usage(String::new()).code(), 64);
        assert_eq!(CliError::System(String::new()).code(), 1);
        assert_eq!(CliError::Rejected(String::new()).code(), 2);
    }

    #[test]
    fn request_fields_map_back_to_flags() {
        let err = StoryRequest::from_value(&json!({"age": 40, "gender": "boy", "element_1": " ", "element_2": "magical", "style": "watercolor"}))
            .unwrap_err();
        let CliError::Usage(msg) = usage_from_fields(err) else { panic!() };
        assert!(msg.contains("--age") && msg.contains("--theme"), "{msg}");
    }

    #[test]
    fn cli_parses_the_documented_forms() {
        Cli::try_parse_from(["fairyland", "generate", "--age", "5", "--gender", "boy", "--theme", "cars"]).unwrap();
        Cli::try_parse_from(["fairyland", "render-prompt", "--version", "p5"]).unwrap();
        Cli::try_parse_from(["fairyland", "library", "list", "--language", "el", "--age-min", "4"]).unwrap();
        assert!(Cli::try_parse_from(["fairyland", "generate", "--age", "5"]).is_err());
    }
}
