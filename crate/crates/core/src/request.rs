//! The customization a reader submits for one book.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::prompt::{Gender, PromptVariables, MAX_AGE, MIN_AGE, MIN_WORDS_LENGTH};

pub const DEFAULT_LANGUAGE: &str = "en";
pub const DEFAULT_WORDS_LENGTH: u32 = 1000;
pub const DEFAULT_IMAGE_SPECS: &str = "soft lighting, vivid colors, high detail";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryRequest {
    pub age: u32,
    pub gender: Gender,
    /// Main theme, e.g. `cars`.
    pub element_1: String,
    /// Plot ingredient, e.g. `magical`.
    pub element_2: String,
    pub style: String,
    #[serde(default = "default_language")]
    pub language: String,
    #[serde(default = "default_words_length")]
    pub words_length: u32,
    #[serde(default = "default_image_specs")]
    pub image_specs: String,
}

fn default_language() -> String {
    DEFAULT_LANGUAGE.to_string()
}

fn default_words_length() -> u32 {
    DEFAULT_WORDS_LENGTH
}

fn default_image_specs() -> String {
    DEFAULT_IMAGE_SPECS.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct RequestErrors(pub Vec<FieldError>);

impl RequestErrors {
    pub fn fields(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|e| e.field.as_str())
    }
}

impl fmt::Display for RequestErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|e| format!("{}: {}", e.field, e.message))
            .collect();
        write!(f, "invalid story request ({})", parts.join("; "))
    }
}

const TEXT_FIELDS: [&str; 5] = ["element_1", "element_2", "style", "language", "image_specs"];

impl StoryRequest {
    /// Reads a request from loosely-typed JSON, collecting one error per bad
    /// field instead of stopping at the first.
    pub fn from_value(value: &Value) -> Result<StoryRequest, RequestErrors> {
        let mut errors = Vec::new();
        let push = |errors: &mut Vec<FieldError>, field: &str, message: String| {
            errors.push(FieldError {
                field: field.to_string(),
                message,
            })
        };
        let Some(obj) = value.as_object() else {
            return Err(RequestErrors(vec![FieldError {
                field: "body".into(),
                message: "expected a JSON object".into(),
            }]));
        };

        let uint = |errors: &mut Vec<FieldError>, field: &str, default: Option<u32>| {
            match obj.get(field) {
                None | Some(Value::Null) => match default {
                    Some(d) => Some(d),
                    None => {
                        push(errors, field, "is required".into());
                        None
                    }
                },
                Some(v) => match v.as_u64().and_then(|n| u32::try_from(n).ok()) {
                    Some(n) => Some(n),
                    None => {
                        push(errors, field, "must be a non-negative integer".into());
                        None
                    }
                },
            }
        };
        let age = uint(&mut errors, "age", None);
        let words_length = uint(&mut errors, "words_length", Some(DEFAULT_WORDS_LENGTH));

        let gender = match obj.get("gender") {
            None | Some(Value::Null) => {
                push(&mut errors, "gender", "is required".into());
                None
            }
            Some(Value::String(s)) => match s.parse::<Gender>() {
                Ok(g) => Some(g),
                Err(msg) => {
                    push(&mut errors, "gender", msg);
                    None
                }
            },
            Some(_) => {
                push(&mut errors, "gender", "must be a string".into());
                None
            }
        };

        let mut texts: Vec<Option<String>> = Vec::with_capacity(TEXT_FIELDS.len());
        for field in TEXT_FIELDS {
            let default = match field {
                "language" => Some(DEFAULT_LANGUAGE),
                "image_specs" => Some(DEFAULT_IMAGE_SPECS),
                _ => None,
            };
            texts.push(match obj.get(field) {
                None | Some(Value::Null) => match default {
                    Some(d) => Some(d.to_string()),
                    None => {
                        push(&mut errors, field, "is required".into());
                        None
                    }
                },
                Some(Value::String(s)) => Some(s.clone()),
                Some(_) => {
                    push(&mut errors, field, "must be a string".into());
                    None
                }
            });
        }

        if !errors.is_empty() {
            return Err(RequestErrors(errors));
        }
        let mut texts = texts.into_iter().map(|t| t.expect("checked above"));
        let req = StoryRequest {
            age: age.expect("checked above"),
            gender: gender.expect("checked above"),
            element_1: texts.next().expect("field"),
            element_2: texts.next().expect("field"),
            style: texts.next().expect("field"),
            language: texts.next().expect("field"),
            words_length: words_length.expect("checked above"),
            image_specs: texts.next().expect("field"),
        };
        req.validated()
    }

    /// Checks ranges and trims text fields.
    pub fn validated(&self) -> Result<StoryRequest, RequestErrors> {
        let mut errors = Vec::new();
        if !(MIN_AGE..=MAX_AGE).contains(&self.age) {
            errors.push(FieldError {
                field: "age".into(),
                message: format!("must be between {MIN_AGE} and {MAX_AGE}, got {}", self.age),
            });
        }
        if self.words_length < MIN_WORDS_LENGTH {
            errors.push(FieldError {
                field: "words_length".into(),
                message: format!("must be at least {MIN_WORDS_LENGTH}, got {}", self.words_length),
            });
        }
        let fields = [
            ("element_1", &self.element_1),
            ("element_2", &self.element_2),
            ("style", &self.style),
            ("language", &self.language),
            ("image_specs", &self.image_specs),
        ];
        for (field, value) in fields {
            if value.trim().is_empty() {
                errors.push(FieldError {
                    field: field.into(),
                    message: "must not be empty".into(),
                });
            }
        }
        if !errors.is_empty() {
            return Err(RequestErrors(errors));
        }
        Ok(StoryRequest {
            age: self.age,
            gender: self.gender,
            element_1: self.element_1.trim().to_string(),
            element_2: self.element_2.trim().to_string(),
            style: self.style.trim().to_string(),
            language: self.language.trim().to_string(),
            words_length: self.words_length,
            image_specs: self.image_specs.trim().to_string(),
        })
    }

    pub fn to_variables(&self, timestamp: Option<String>) -> PromptVariables {
        PromptVariables {
            words_length: Some(self.words_length),
            age: Some(self.age),
            gender: Some(self.gender),
            element_1: Some(self.element_1.clone()),
            element_2: Some(self.element_2.clone()),
            style: Some(self.style.clone()),
            image_specs: Some(self.image_specs.clone()),
            language: Some(self.language.clone()),
            timestamp,
        }
    }
}
