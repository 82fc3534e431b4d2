use std::path::Path;

use fairyland_core::Gender;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OPTIONS_ENV: &str = "FAIRYLAND_OPTIONS";
pub const DEFAULT_OPTIONS_FILE: &str = "options.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageOption {
    pub tag: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeRange {
    pub label: String,
    pub min: u32,
    pub max: u32,
}

/// Selection vocabularies offered to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Options {
    pub languages: Vec<LanguageOption>,
    pub styles: Vec<String>,
    pub themes: Vec<String>,
    pub genders: Vec<Gender>,
    pub age_ranges: Vec<AgeRange>,
}

#[derive(Debug, Error)]
pub enum OptionsError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid options file {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("invalid options: {0}")]
    Invalid(String),
}

fn words(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for Options {
    fn default() -> Self {
        Self {
            languages: vec![
                LanguageOption { tag: "en".into(), name: "English".into() },
                LanguageOption { tag: "el".into(), name: "Greek".into() },
            ],
            styles: words(&["watercolor", "cartoon", "papercraft", "3d render"]),
            themes: words(&["medieval", "space", "cars", "ocean", "forest"]),
            genders: vec![Gender::Boy, Gender::Girl, Gender::Child],
            age_ranges: vec![
                AgeRange { label: "2-4".into(), min: 2, max: 4 },
                AgeRange { label: "5-7".into(), min: 5, max: 7 },
                AgeRange { label: "8-10".into(), min: 8, max: 10 },
                AgeRange { label: "11-12".into(), min: 11, max: 12 },
            ],
        }
    }
}

impl Options {
    pub fn validate(&self) -> Result<(), OptionsError> {
        let empty = [
            ("languages", self.languages.is_empty()),
            ("styles", self.styles.is_empty()),
            ("themes", self.themes.is_empty()),
            ("genders", self.genders.is_empty()),
            ("age_ranges", self.age_ranges.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(OptionsError::Invalid(format!("{name} must not be empty")));
        }
        for r in &self.age_ranges {
            if r.min > r.max || r.min < 2 || r.max > 12 {
                return Err(OptionsError::Invalid(format!("age range {} is outside 2-12", r.label)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, OptionsError> {
        let shown = path.display().to_string();
        let raw = std::fs::read(path).map_err(|source| OptionsError::Io { path: shown.clone(), source })?;
        let options: Options =
            serde_json::from_slice(&raw).map_err(|source| OptionsError::Parse { path: shown, source })?;
        options.validate()?;
        Ok(options)
    }

    /// `FAIRYLAND_OPTIONS` if set, else `./options.json` if present, else
    /// the built-in defaults.
    pub fn from_env() -> Result<Self, OptionsError> {
        match std::env::var(OPTIONS_ENV).ok().filter(|v| !v.trim().is_empty()) {
            Some(path) => Self::load(Path::new(&path)),
            None if Path::new(DEFAULT_OPTIONS_FILE).is_file() => Self::load(Path::new(DEFAULT_OPTIONS_FILE)),
            None => Ok(Self::default()),
        }
    }
}
