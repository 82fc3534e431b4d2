use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use fairyland_core::gateway::{
    record_replay, Backend, CassetteMode, GatewayConfig, HttpBackend, ImagePayload, ScriptedBackend,
    SyntheticBackend, PLACEHOLDER_PNG,
};
use serde_json::Value;

use crate::args::BackendArgs;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Mock,
    Live,
    Replay(PathBuf),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(BackendSpec::Mock),
            "live" => Ok(BackendSpec::Live),
            _ => match s.strip_prefix("replay:") {
                Some(path) if !path.is_empty() => Ok(BackendSpec::Replay(PathBuf::from(path))),
                _ => Err(format!("expected mock, live or replay:<cassette>, got `{s}`")),
            },
        }
    }
}

/// Chat responses from a script file: a JSON array whose string items are
/// sent as-is and whose other items are sent as serialized JSON.
fn load_script(path: &Path) -> Result<ScriptedBackend, CliError> {
    let raw = std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let items: Vec<Value> = serde_json::from_slice(&raw)
        .map_err(|e| CliError::Usage(format!("{} is not a JSON array: {e}", path.display())))?;
    let mut backend = ScriptedBackend::new().with_default_image(ImagePayload::Bytes {
        data: PLACEHOLDER_PNG.to_vec(),
        media_type: "image/png".into(),
    });
    for item in items {
        let text = match item {
            Value::String(s) => s,
            other => other.to_string(),
        };
        backend = backend.with_chat(Ok(text));
    }
    Ok(backend)
}

pub fn build(args: &BackendArgs, config: &GatewayConfig) -> Result<Arc<dyn Backend>, CliError> {
    if args.mock_script.is_some() && args.backend != BackendSpec::Mock {
        return Err(CliError::Usage("--mock-script needs --backend mock".into()));
    }
    let base: Arc<dyn Backend> = match &args.backend {
        BackendSpec::Mock => match &args.mock_script {
            Some(path) => Arc::new(load_script(path)?),
            None => Arc::new(SyntheticBackend::new()),
        },
        BackendSpec::Live => {
            if config.api_key.is_empty() {
                return Err(CliError::System("FAIRYLAND_API_KEY is not set".into()));
            }
            Arc::new(HttpBackend::new(config).map_err(|e| CliError::System(e.to_string()))?)
        }
        BackendSpec::Replay(path) => Arc::new(
            record_replay(CassetteMode::Replay, path, None).map_err(|e| CliError::System(e.to_string()))?,
        ),
    };
    match &args.record {
        Some(path) => Ok(Arc::new(
            record_replay(CassetteMode::Record, path, Some(base)).map_err(|e| CliError::System(e.to_string()))?,
        )),
        None => Ok(base),
    }
}
