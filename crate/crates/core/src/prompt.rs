//! Versioned fairytale prompts and their deterministic renderer.
//!
//! Six prompt versions ship as plain-text templates under `prompts/`. Only
//! the production version (P5) carries `{{name}}` tokens; the earlier
//! versions are concrete text. See `prompts/VARIABLES.md` for the mapping
//! from the prompt's variable words to tokens.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;
use std::time::{SystemTime, UNIX_EPOCH};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Text that precedes the nonce in P5.
pub const NONCE_MARKER: &str = "Please ignore the following timestamp ";

/// Placeholders that render to a default when the variable is absent.
const OPTIONAL_PLACEHOLDERS: &[&str] = &["language"];

pub const MIN_AGE: u32 = 2;
pub const MAX_AGE: u32 = 12;
pub const MIN_WORDS_LENGTH: u32 = 100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("missing variable `{0}`")]
    MissingVariable(String),
    #[error("unknown prompt version `{0}`")]
    UnknownVersion(String),
    #[error("invalid variable `{field}`: {message}")]
    InvalidVariable { field: &'static str, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptVersionId {
    V0,
    P1,
    P2,
    P3,
    P4,
    P5,
}

impl PromptVersionId {
    pub const ALL: [PromptVersionId; 6] = [Self::V0, Self::P1, Self::P2, Self::P3, Self::P4, Self::P5];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::V0 => "V0",
            Self::P1 => "P1",
            Self::P2 => "P2",
            Self::P3 => "P3",
            Self::P4 => "P4",
            Self::P5 => "P5",
        }
    }

    /// Lowercase file stem, e.g. `p5`.
    pub fn file_stem(self) -> &'static str {
        match self {
            Self::V0 => "v0",
            Self::P1 => "p1",
            Self::P2 => "p2",
            Self::P3 => "p3",
            Self::P4 => "p4",
            Self::P5 => "p5",
        }
    }
}

impl fmt::Display for PromptVersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVersionId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PromptError::UnknownVersion(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Boy,
    Girl,
    Child,
}

impl Gender {
    pub const ALL: [Gender; 3] = [Gender::Boy, Gender::Girl, Gender::Child];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Boy => "boy",
            Gender::Girl => "girl",
            Gender::Child => "child",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Gender::ALL
            .into_iter()
            .find(|g| g.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("expected one of boy, girl, child; got `{s}`"))
    }
}

/// English display name for a language tag; unknown tags pass through.
pub fn language_name(tag: &str) -> String {
    let name = match tag.trim().to_ascii_lowercase().as_str() {
        "en" | "english" => "English",
        "el" | "greek" => "Greek",
        "es" | "spanish" => "Spanish",
        "fr" | "french" => "French",
        "de" | "german" => "German",
        "it" | "italian" => "Italian",
        "pt" | "portuguese" => "Portuguese",
        _ => return tag.trim().to_string(),
    };
    name.to_string()
}

/// Substitution set for a template. Fields are optional so that a partially
/// filled set can be rendered against templates that do not need every field.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptVariables {
    pub words_length: Option<u32>,
    pub age: Option<u32>,
    pub gender: Option<Gender>,
    pub element_1: Option<String>,
    pub element_2: Option<String>,
    pub style: Option<String>,
    pub image_specs: Option<String>,
    pub language: Option<String>,
    pub timestamp: Option<String>,
}

impl PromptVariables {
    /// Trims text fields and checks ranges on everything that is present.
    pub fn normalized(&self) -> Result<PromptVariables, PromptError> {
        fn text(
            field: &'static str,
            value: &Option<String>,
        ) -> Result<Option<String>, PromptError> {
            match value {
                None => Ok(None),
                Some(v) => {
                    let t = v.trim();
                    if t.is_empty() {
                        Err(PromptError::InvalidVariable {
                            field,
                            message: "must not be empty".into(),
                        })
                    } else {
                        Ok(Some(t.to_string()))
                    }
                }
            }
        }

        if let Some(age) = self.age {
            if !(MIN_AGE..=MAX_AGE).contains(&age) {
                return Err(PromptError::InvalidVariable {
                    field: "age",
                    message: format!("must be between {MIN_AGE} and {MAX_AGE}, got {age}"),
                });
            }
        }
        if let Some(words) = self.words_length {
            if words < MIN_WORDS_LENGTH {
                return Err(PromptError::InvalidVariable {
                    field: "words_length",
                    message: format!("must be at least {MIN_WORDS_LENGTH}, got {words}"),
                });
            }
        }
        Ok(PromptVariables {
            words_length: self.words_length,
            age: self.age,
            gender: self.gender,
            element_1: text("element_1", &self.element_1)?,
            element_2: text("element_2", &self.element_2)?,
            style: text("style", &self.style)?,
            image_specs: text("image_specs", &self.image_specs)?,
            language: text("language", &self.language)?,
            timestamp: text("timestamp", &self.timestamp)?,
        })
    }

    fn lookup(&self, name: &str) -> Option<String> {
        match name {
            "words_length" => self.words_length.map(|w| w.to_string()),
            "age" => self.age.map(|a| a.to_string()),
            "gender" => self.gender.map(|g| g.to_string()),
            "element_1" => self.element_1.clone(),
            "element_2" => self.element_2.clone(),
            "style" => self.style.clone(),
            "image_specs" => self.image_specs.clone(),
            "language" => Some(language_name(self.language.as_deref().unwrap_or("en"))),
            "timestamp" => self.timestamp.clone(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

#[derive(Debug, Clone)]
pub struct PromptVersion {
    pub id: PromptVersionId,
    pub body: &'static str,
    pub change_note: &'static str,
    segments: Vec<Segment>,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{([a-z0-9_]+)\}\}").expect("static regex"))
}

fn split_segments(body: &str) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut last = 0;
    for caps in placeholder_re().captures_iter(body) {
        let whole = caps.get(0).expect("match");
        if whole.start() > last {
            segments.push(Segment::Literal(body[last..whole.start()].to_string()));
        }
        segments.push(Segment::Placeholder(caps[1].to_string()));
        last = whole.end();
    }
    if last < body.len() {
        segments.push(Segment::Literal(body[last..].to_string()));
    }
    segments
}

fn strip_newline(s: &'static str) -> &'static str {
    s.strip_suffix('\n').unwrap_or(s)
}

impl PromptVersion {
    fn new(id: PromptVersionId, body: &'static str, change_note: &'static str) -> Self {
        let body = strip_newline(body);
        Self {
            id,
            body,
            change_note,
            segments: split_segments(body),
        }
    }

    /// Every placeholder name in the body, in first-occurrence order.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for seg in &self.segments {
            if let Segment::Placeholder(name) = seg {
                if !seen.contains(&name.as_str()) {
                    seen.push(name.as_str());
                }
            }
        }
        seen
    }

    pub fn required_placeholders(&self) -> BTreeSet<&str> {
        self.placeholders()
            .into_iter()
            .filter(|p| !OPTIONAL_PLACEHOLDERS.contains(p))
            .collect()
    }

    /// Byte range the nonce occupies in a rendering of this version, given
    /// the rendered text. `None` for versions without a timestamp.
    pub fn nonce_span(&self, rendered: &str) -> Option<std::ops::Range<usize>> {
        if !self.placeholders().contains(&"timestamp") {
            return None;
        }
        nonce_span(rendered)
    }

    /// Recovers variable values from a rendering of this version. Returns
    /// `None` when `text` was not produced by this template.
    pub fn extract(&self, text: &str) -> Option<HashMap<String, String>> {
        let mut pattern = String::from("(?s)^");
        let mut names = Vec::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(lit) => pattern.push_str(&regex::escape(lit)),
                Segment::Placeholder(name) => {
                    pattern.push_str("(.+?)");
                    names.push(name.clone());
                }
            }
        }
        pattern.push('$');
        let re = Regex::new(&pattern).ok()?;
        let caps = re.captures(text)?;
        let mut out = HashMap::new();
        for (i, name) in names.into_iter().enumerate() {
            let value = caps.get(i + 1)?.as_str().to_string();
            out.entry(name).or_insert(value);
        }
        Some(out)
    }
}

/// Locates the nonce that follows [`NONCE_MARKER`] in a rendered prompt.
pub fn nonce_span(rendered: &str) -> Option<std::ops::Range<usize>> {
    let start = rendered.rfind(NONCE_MARKER)? + NONCE_MARKER.len();
    let rest = &rendered[start..];
    let len = rest
        .find(char::is_whitespace)
        .unwrap_or(rest.len());
    let token = &rest[..len];
    let token = token.strip_suffix('.').unwrap_or(token);
    Some(start..start + token.len())
}

/// Replaces the nonce, if any, with a fixed marker.
pub fn normalize_nonce(rendered: &str) -> String {
    match nonce_span(rendered) {
        Some(span) => {
            let mut out = String::with_capacity(rendered.len());
            out.push_str(&rendered[..span.start]);
            out.push_str("{{timestamp}}");
            out.push_str(&rendered[span.end..]);
            out
        }
        None => rendered.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub version_id: PromptVersionId,
    pub text: String,
    pub variables_used: PromptVariables,
}

/// The six shipped prompt versions, oldest first.
pub fn versions() -> &'static [PromptVersion] {
    static VERSIONS: OnceLock<Vec<PromptVersion>> = OnceLock::new();
    VERSIONS.get_or_init(|| {
        vec![
            PromptVersion::new(
                PromptVersionId::V0,
                include_str!("../prompts/v0.txt"),
                "Single hard-coded request: a car fairy tale for a five year old, no output format.",
            ),
            PromptVersion::new(
                PromptVersionId::P1,
                include_str!("../prompts/p1.txt"),
                "Adds scene image prompts and the JSON output contract.",
            ),
            PromptVersion::new(
                PromptVersionId::P2,
                include_str!("../prompts/p2.txt"),
                "Asks for richer scenes and consistent imagery; first variable placeholders.",
            ),
            PromptVersion::new(
                PromptVersionId::P3,
                include_str!("../prompts/p3.txt"),
                "Tailors the story to reader preferences; keeps the JSON contract.",
            ),
            PromptVersion::new(
                PromptVersionId::P4,
                include_str!("../prompts/p4.txt"),
                "Detailed per-scene descriptions for the image model; keeps the JSON contract.",
            ),
            PromptVersion::new(
                PromptVersionId::P5,
                include_str!("../prompts/p5.txt"),
                "Production prompt: character profiles, styled scenes, cover, language and nonce.",
            ),
        ]
    })
}

pub fn version(id: PromptVersionId) -> &'static PromptVersion {
    versions()
        .iter()
        .find(|v| v.id == id)
        .expect("every id has a shipped template")
}

pub fn list_versions() -> Vec<(PromptVersionId, &'static str)> {
    versions().iter().map(|v| (v.id, v.change_note)).collect()
}

pub fn render(id: PromptVersionId, vars: &PromptVariables) -> Result<RenderedPrompt, PromptError> {
    let template = version(id);
    let vars = vars.normalized()?;
    let mut text = String::with_capacity(template.body.len() + 128);
    for seg in &template.segments {
        match seg {
            Segment::Literal(lit) => text.push_str(lit),
            Segment::Placeholder(name) => {
                let value = vars
                    .lookup(name)
                    .ok_or_else(|| PromptError::MissingVariable(name.clone()))?;
                text.push_str(&value);
            }
        }
    }
    Ok(RenderedPrompt {
        version_id: id,
        text,
        variables_used: vars,
    })
}

/// Wall-clock source for nonces.
pub trait Clock: Send + Sync {
    fn unix_seconds(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn unix_seconds(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn unix_seconds(&self) -> u64 {
        self.0
    }
}

/// Issues `<seconds>-<counter>` nonces. The counter is shared by all callers
/// of one source, so two nonces from it never collide.
#[derive(Debug, Default)]
pub struct NonceSource {
    counter: AtomicU64,
}

impl NonceSource {
    pub const fn new() -> Self {
        Self {
            counter: AtomicU64::new(0),
        }
    }

    pub fn fresh_nonce(&self, clock: &dyn Clock) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed) + 1;
        format!("{}-{}", clock.unix_seconds(), n)
    }
}

/// Process-wide nonce source.
pub fn fresh_nonce(clock: &dyn Clock) -> String {
    static GLOBAL: NonceSource = NonceSource::new();
    GLOBAL.fresh_nonce(clock)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn v0_scenario() -> PromptVariables {
        PromptVariables {
            words_length: Some(1000),
            age: Some(5),
            gender: Some(Gender::Boy),
            element_1: Some("cars".into()),
            element_2: Some("magical".into()),
            style: Some("watercolor".into()),
            image_specs: Some("vivid colors".into()),
            language: None,
            timestamp: Some("1718000000-1".into()),
        }
    }

    #[test]
    fn p5_required_placeholders() {
        let expected: BTreeSet<&str> = [
            "words_length",
            "age",
            "gender",
            "element_1",
            "element_2",
            "style",
            "image_specs",
            "timestamp",
        ]
        .into_iter()
        .collect();
        assert_eq!(version(PromptVersionId::P5).required_placeholders(), expected);
    }

    #[test]
    fn earlier_versions_have_no_placeholders() {
        for id in [
            PromptVersionId::V0,
            PromptVersionId::P1,
            PromptVersionId::P2,
            PromptVersionId::P3,
            PromptVersionId::P4,
        ] {
            assert!(version(id).placeholders().is_empty(), "{id}");
        }
    }

    #[test]
    fn p5_renders_v0_scenario() {
        let out = render(PromptVersionId::P5, &v0_scenario()).unwrap();
        assert!(out.text.contains("5-year-old boy"));
        assert!(out.text.contains("cars"));
        assert!(out.text.contains("approximately 1000 words"));
        assert!(out.text.contains("Use English comprehensively"));
        assert!(out.text.contains("watercolor render of"));
        assert!(out.text.ends_with("timestamp 1718000000-1."));
        assert!(!out.text.contains("{{"));
    }

    #[test]
    fn v0_is_unchanged_by_variables() {
        let out = render(PromptVersionId::V0, &v0_scenario()).unwrap();
        assert_eq!(out.text, version(PromptVersionId::V0).body);
        let out = render(PromptVersionId::V0, &PromptVariables::default()).unwrap();
        assert!(out.text.starts_with("ChatGPT, from now on"));
        assert!(out.text.contains("a 5 years old boy and the theme will be for cars"));
    }

    #[test]
    fn missing_variable_is_named() {
        let mut vars = v0_scenario();
        vars.element_2 = None;
        assert_eq!(
            render(PromptVersionId::P5, &vars).unwrap_err(),
            PromptError::MissingVariable("element_2".into())
        );
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let mut vars = v0_scenario();
        vars.age = Some(99);
        assert!(matches!(
            render(PromptVersionId::P5, &vars),
            Err(PromptError::InvalidVariable { field: "age", .. })
        ));
        let mut vars = v0_scenario();
        vars.words_length = Some(50);
        assert!(render(PromptVersionId::P5, &vars).is_err());
        let mut vars = v0_scenario();
        vars.style = Some("   ".into());
        assert!(render(PromptVersionId::P5, &vars).is_err());
    }

    #[test]
    fn language_tag_maps_to_name() {
        let mut vars = v0_scenario();
        vars.language = Some("el".into());
        let out = render(PromptVersionId::P5, &vars).unwrap();
        assert!(out.text.contains("Use Greek comprehensively"));
        // image descriptions stay in English whatever the story language
        assert!(out.text.contains("Provide descriptions, in English,"));
    }

    #[test]
    fn list_versions_is_ordered() {
        let list = list_versions();
        assert_eq!(list.len(), 6);
        let ids: Vec<_> = list.iter().map(|(id, _)| *id).collect();
        assert_eq!(ids, PromptVersionId::ALL.to_vec());
        assert!(list.iter().all(|(_, note)| !note.trim().is_empty()));
        assert_eq!(list, list_versions());
    }

    #[test]
    fn version_ids_parse() {
        assert_eq!("p5".parse::<PromptVersionId>().unwrap(), PromptVersionId::P5);
        assert_eq!("V0".parse::<PromptVersionId>().unwrap(), PromptVersionId::V0);
        assert_eq!(
            "p7".parse::<PromptVersionId>().unwrap_err(),
            PromptError::UnknownVersion("p7".into())
        );
    }

    #[test]
    fn nonce_counter_increments() {
        let source = NonceSource::new();
        let clock = FixedClock(1718000000);
        assert_eq!(source.fresh_nonce(&clock), "1718000000-1");
        assert_eq!(source.fresh_nonce(&clock), "1718000000-2");
    }

    #[test]
    fn nonces_are_unique_across_threads() {
        let source = std::sync::Arc::new(NonceSource::new());
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let s = source.clone();
                std::thread::spawn(move || {
                    (0..200).map(|_| s.fresh_nonce(&FixedClock(7))).collect::<Vec<_>>()
                })
            })
            .collect();
        let mut all = BTreeSet::new();
        for h in handles {
            for n in h.join().unwrap() {
                assert!(all.insert(n));
            }
        }
        assert_eq!(all.len(), 1600);
    }

    #[test]
    fn nonce_normalization() {
        let a = render(PromptVersionId::P5, &v0_scenario()).unwrap().text;
        let mut vars = v0_scenario();
        vars.timestamp = Some("1800000000-42".into());
        let b = render(PromptVersionId::P5, &vars).unwrap().text;
        assert_ne!(a, b);
        assert_eq!(normalize_nonce(&a), normalize_nonce(&b));
        let span = nonce_span(&a).unwrap();
        assert_eq!(&a[span], "1718000000-1");
    }

    #[test]
    fn extract_inverts_render() {
        let vars = v0_scenario();
        let text = render(PromptVersionId::P5, &vars).unwrap().text;
        let got = version(PromptVersionId::P5).extract(&text).unwrap();
        assert_eq!(got["age"], "5");
        assert_eq!(got["element_1"], "cars");
        assert_eq!(got["image_specs"], "vivid colors");
        assert_eq!(got["timestamp"], "1718000000-1");
        assert!(version(PromptVersionId::P5).extract("hello").is_none());
    }
}
