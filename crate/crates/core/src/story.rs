//! The story contract returned by the model, and its parser/serializer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Keys of the four scene descriptions, in order.
pub const SCENE_KEYS: [&str; 4] = ["Image1", "Image2", "Image3", "Image4"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterProfile {
    pub name: String,
    pub appearance: String,
}

/// A parsed story. `image_descriptions` is keyed `Image1`..`Image4` when it
/// comes out of [`parse_story_response`]; lints also accept books built by
/// hand with other scene counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryBook {
    pub title: String,
    pub characters: Vec<CharacterProfile>,
    pub story: String,
    pub image_descriptions: BTreeMap<String, String>,
    pub book_cover_description: String,
}

impl StoryBook {
    pub fn scene(&self, key: &str) -> Option<&str> {
        self.image_descriptions.get(key).map(String::as_str)
    }

    pub fn character_names(&self) -> impl Iterator<Item = &str> {
        self.characters.iter().map(|c| c.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum ParseErrorKind {
    MalformedJson,
    MissingField(String),
    WrongSceneCount(usize),
    EmptyField(String),
    BadEncoding,
}

impl ParseErrorKind {
    pub fn name(&self) -> &'static str {
        match self {
            ParseErrorKind::MalformedJson => "MalformedJson",
            ParseErrorKind::MissingField(_) => "MissingField",
            ParseErrorKind::WrongSceneCount(_) => "WrongSceneCount",
            ParseErrorKind::EmptyField(_) => "EmptyField",
            ParseErrorKind::BadEncoding => "BadEncoding",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{}: {detail}", kind.name())]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub detail: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

/// `"Book Cover Description"` and `"bookCoverDescription"` both become
/// `book_cover_description`.
fn canonical_key(key: &str) -> String {
    let mut out = String::with_capacity(key.len() + 4);
    let mut prev_lower = false;
    for ch in key.trim().chars() {
        if ch == ' ' || ch == '-' || ch == '_' {
            if !out.ends_with('_') {
                out.push('_');
            }
            prev_lower = false;
        } else if ch.is_uppercase() {
            if prev_lower && !out.ends_with('_') {
                out.push('_');
            }
            out.extend(ch.to_lowercase());
            prev_lower = false;
        } else {
            out.push(ch);
            prev_lower = ch.is_lowercase() || ch.is_ascii_digit();
        }
    }
    out
}

/// Canonicalizes keys of one object level; later duplicates are dropped
/// with a warning.
fn canonical_object(
    obj: &Map<String, Value>,
    path: &str,
    warnings: &mut Vec<String>,
) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    for (key, value) in obj {
        let canon = canonical_key(key);
        if out.contains_key(&canon) {
            warnings.push(format!("duplicate key `{path}{key}` ignored"));
            continue;
        }
        out.insert(canon, value.clone());
    }
    out
}

fn required_text(
    obj: &BTreeMap<String, Value>,
    key: &str,
    path: &str,
) -> Result<String, ParseError> {
    let field = format!("{path}{key}");
    match obj.get(key) {
        None | Some(Value::Null) => Err(ParseError::new(
            ParseErrorKind::MissingField(field.clone()),
            format!("field `{field}` is missing"),
        )),
        Some(Value::String(s)) if s.trim().is_empty() => Err(ParseError::new(
            ParseErrorKind::EmptyField(field.clone()),
            format!("field `{field}` is empty"),
        )),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(ParseError::new(
            ParseErrorKind::MalformedJson,
            format!("field `{field}` must be a string, found {}", type_name(other)),
        )),
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

const TOP_LEVEL_KEYS: [&str; 5] = [
    "title",
    "characters",
    "story",
    "image_descriptions",
    "book_cover_description",
];

/// Parses a model response and reports keys that were ignored.
pub fn parse_story_response_with_warnings(
    raw: &[u8],
) -> Result<(StoryBook, Vec<String>), ParseError> {
    let text = std::str::from_utf8(raw).map_err(|e| {
        ParseError::new(
            ParseErrorKind::BadEncoding,
            format!("invalid UTF-8 at byte {}", e.valid_up_to()),
        )
    })?;
    let value: Value = serde_json::from_str(text)
        .map_err(|e| ParseError::new(ParseErrorKind::MalformedJson, e.to_string()))?;
    let Value::Object(root) = value else {
        return Err(ParseError::new(
            ParseErrorKind::MalformedJson,
            format!("expected a JSON object, found {}", type_name(&value)),
        ));
    };

    let mut warnings = Vec::new();
    let root = canonical_object(&root, "", &mut warnings);
    for key in root.keys() {
        if !TOP_LEVEL_KEYS.contains(&key.as_str()) {
            warnings.push(format!("unknown field `{key}` ignored"));
        }
    }

    let title = required_text(&root, "title", "")?;

    let characters = match root.get("characters") {
        None | Some(Value::Null) => {
            return Err(ParseError::new(
                ParseErrorKind::MissingField("characters".into()),
                "field `characters` is missing",
            ))
        }
        Some(Value::Array(items)) if items.is_empty() => {
            return Err(ParseError::new(
                ParseErrorKind::EmptyField("characters".into()),
                "field `characters` is empty",
            ))
        }
        Some(Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                let path = format!("characters[{i}].");
                let Value::Object(obj) = item else {
                    return Err(ParseError::new(
                        ParseErrorKind::MalformedJson,
                        format!("`characters[{i}]` must be an object"),
                    ));
                };
                let obj = canonical_object(obj, &path, &mut warnings);
                for key in obj.keys() {
                    if key != "name" && key != "appearance" {
                        warnings.push(format!("unknown field `{path}{key}` ignored"));
                    }
                }
                out.push(CharacterProfile {
                    name: required_text(&obj, "name", &path)?,
                    appearance: required_text(&obj, "appearance", &path)?,
                });
            }
            out
        }
        Some(other) => {
            return Err(ParseError::new(
                ParseErrorKind::MalformedJson,
                format!("field `characters` must be an array, found {}", type_name(other)),
            ))
        }
    };

    let story = required_text(&root, "story", "")?;

    let image_descriptions = match root.get("image_descriptions") {
        None | Some(Value::Null) => {
            return Err(ParseError::new(
                ParseErrorKind::MissingField("image_descriptions".into()),
                "field `image_descriptions` is missing",
            ))
        }
        Some(Value::Object(scenes)) => {
            if scenes.len() != SCENE_KEYS.len() {
                return Err(ParseError::new(
                    ParseErrorKind::WrongSceneCount(scenes.len()),
                    format!("expected 4 image descriptions, found {}", scenes.len()),
                ));
            }
            // Scene keys are matched case-insensitively: "image1" == "Image1".
            let mut out = BTreeMap::new();
            for key in SCENE_KEYS {
                let found = scenes
                    .iter()
                    .find(|(k, _)| k.trim().eq_ignore_ascii_case(key));
                let field = format!("image_descriptions.{key}");
                match found {
                    None => {
                        return Err(ParseError::new(
                            ParseErrorKind::MissingField(field.clone()),
                            format!("field `{field}` is missing"),
                        ))
                    }
                    Some((_, Value::String(s))) if s.trim().is_empty() => {
                        return Err(ParseError::new(
                            ParseErrorKind::EmptyField(field.clone()),
                            format!("field `{field}` is empty"),
                        ))
                    }
                    Some((_, Value::String(s))) => {
                        out.insert(key.to_string(), s.clone());
                    }
                    Some((_, other)) => {
                        return Err(ParseError::new(
                            ParseErrorKind::MalformedJson,
                            format!("field `{field}` must be a string, found {}", type_name(other)),
                        ))
                    }
                }
            }
            out
        }
        Some(other) => {
            return Err(ParseError::new(
                ParseErrorKind::MalformedJson,
                format!(
                    "field `image_descriptions` must be an object, found {}",
                    type_name(other)
                ),
            ))
        }
    };

    let book_cover_description = required_text(&root, "book_cover_description", "")?;

    Ok((
        StoryBook {
            title,
            characters,
            story,
            image_descriptions,
            book_cover_description,
        },
        warnings,
    ))
}

pub fn parse_story_response(raw: &[u8]) -> Result<StoryBook, ParseError> {
    let (book, warnings) = parse_story_response_with_warnings(raw)?;
    for w in &warnings {
        tracing::warn!(warning = %w, "story response");
    }
    Ok(book)
}

/// Canonical JSON form: fixed key order, two-space indentation, raw UTF-8.
pub fn serialize_book(book: &StoryBook) -> String {
    serde_json::to_string_pretty(book).expect("StoryBook always serializes")
}

/// Number of maximal runs of non-whitespace characters.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
