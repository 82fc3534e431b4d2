//! Quantitative and referential checks over a parsed story.
//!
//! Every violation code carries a fixed severity and weight. The report
//! score is `1 - min(1, sum of weights)`; weights are kept in tenths so the
//! score is exact.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::prompt::PromptVariables;
use crate::request::StoryRequest;
use crate::story::{word_count, StoryBook};

/// Scenes must be strictly longer than this.
pub const MIN_SCENE_WORDS: usize = 50;
/// Story length tolerance around the requested word count.
pub const STORY_LENGTH_TOLERANCE: f64 = 0.2;
pub const CHAR_DESC_MIN_WORDS: usize = 15;
pub const CHAR_DESC_MAX_WORDS: usize = 60;

/// Capitalized tokens that are never flagged.
const CASE_STOP_LIST: &[&str] = &["I", "DALLE"];

/// Additional tokens allowed capitalized in a title.
const TITLE_STOP_LIST: &[&str] = &[
    "A", "An", "The", "And", "Or", "But", "Of", "In", "On", "At", "To", "For", "With", "From",
    "By", "Into", "Over", "Under", "Up", "Is", "Are", "Was", "My", "Our", "Their", "His", "Her",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Warning => "warning",
            Severity::Error => "error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", content = "params", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    SceneCount { found: usize },
    SceneTooShort { scene: String, words: usize },
    StoryLengthOff { actual: usize, target: u32 },
    CharDescLength { name: String, words: usize },
    TitleNameUnknown { name: String },
    SceneUnknownName { scene: String, token: String },
    SceneBadCase { scene: String, token: String },
    SceneMissingSpecs { scene: String },
    SceneMissingStyle { scene: String },
    CoverMissing {},
    CharUnreferenced { name: String },
}

impl ViolationCode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SceneCount { .. } => "SCENE_COUNT",
            Self::SceneTooShort { .. } => "SCENE_TOO_SHORT",
            Self::StoryLengthOff { .. } => "STORY_LENGTH_OFF",
            Self::CharDescLength { .. } => "CHAR_DESC_LENGTH",
            Self::TitleNameUnknown { .. } => "TITLE_NAME_UNKNOWN",
            Self::SceneUnknownName { .. } => "SCENE_UNKNOWN_NAME",
            Self::SceneBadCase { .. } => "SCENE_BAD_CASE",
            Self::SceneMissingSpecs { .. } => "SCENE_MISSING_SPECS",
            Self::SceneMissingStyle { .. } => "SCENE_MISSING_STYLE",
            Self::CoverMissing {} => "COVER_MISSING",
            Self::CharUnreferenced { .. } => "CHAR_UNREFERENCED",
        }
    }

    /// Weight in tenths of a score point.
    pub fn weight_tenths(&self) -> u32 {
        match self {
            Self::SceneCount { .. } | Self::SceneMissingSpecs { .. } | Self::CoverMissing {} => 3,
            Self::SceneTooShort { .. }
            | Self::SceneBadCase { .. }
            | Self::SceneUnknownName { .. }
            | Self::SceneMissingStyle { .. } => 2,
            Self::StoryLengthOff { .. }
            | Self::CharDescLength { .. }
            | Self::CharUnreferenced { .. }
            | Self::TitleNameUnknown { .. } => 1,
        }
    }

    pub fn weight(&self) -> f64 {
        f64::from(self.weight_tenths()) / 10.0
    }

    pub fn severity(&self) -> Severity {
        match self {
            Self::StoryLengthOff { .. }
            | Self::CharDescLength { .. }
            | Self::CharUnreferenced { .. }
            | Self::TitleNameUnknown { .. } => Severity::Warning,
            _ => Severity::Error,
        }
    }

    fn message(&self) -> String {
        match self {
            Self::SceneCount { found } => format!("expected 4 scene descriptions, found {found}"),
            Self::SceneTooShort { scene, words } => {
                format!("{scene} has {words} words; scenes need more than {MIN_SCENE_WORDS}")
            }
            Self::StoryLengthOff { actual, target } => {
                format!("story has {actual} words; requested approximately {target}")
            }
            Self::CharDescLength { name, words } => format!(
                "appearance of {name} has {words} words; expected {CHAR_DESC_MIN_WORDS} to {CHAR_DESC_MAX_WORDS}"
            ),
            Self::TitleNameUnknown { name } => {
                format!("title mentions `{name}` which is not a character")
            }
            Self::SceneUnknownName { scene, token } => {
                format!("{scene} names `{token}` which has no character description")
            }
            Self::SceneBadCase { scene, token } => {
                format!("{scene} capitalizes `{token}` which is not a character name")
            }
            Self::SceneMissingSpecs { scene } => {
                format!("{scene} does not end with the image specifications")
            }
            Self::SceneMissingStyle { scene } => {
                format!("{scene} does not open with \"<style> render of\"")
            }
            Self::CoverMissing {} => "book cover description is empty".to_string(),
            Self::CharUnreferenced { name } => format!("{name} appears in no scene description"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    #[serde(flatten)]
    pub code: ViolationCode,
    pub severity: Severity,
    pub message: String,
}

impl Violation {
    pub fn new(code: ViolationCode) -> Self {
        Self {
            severity: code.severity(),
            message: code.message(),
            code,
        }
    }
}

impl From<ViolationCode> for Violation {
    fn from(code: ViolationCode) -> Self {
        Violation::new(code)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub score: f64,
    pub violations: Vec<Violation>,
}

impl Default for ValidationReport {
    fn default() -> Self {
        Self::from_violations(Vec::new())
    }
}

impl ValidationReport {
    pub fn from_violations(violations: Vec<Violation>) -> Self {
        let tenths: u32 = violations.iter().map(|v| v.code.weight_tenths()).sum();
        let score = f64::from(10 - tenths.min(10)) / 10.0;
        Self { score, violations }
    }

    pub fn has_errors(&self) -> bool {
        self.violations.iter().any(|v| v.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == Severity::Error)
    }

    pub fn codes(&self) -> Vec<&'static str> {
        self.violations.iter().map(|v| v.code.name()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes")
    }
}

pub fn merge_reports(a: &ValidationReport, b: &ValidationReport) -> ValidationReport {
    let mut all = a.violations.clone();
    all.extend(b.violations.iter().cloned());
    ValidationReport::from_violations(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Token<'a> {
    text: &'a str,
    sentence_initial: bool,
}

impl Token<'_> {
    fn is_capitalized(&self) -> bool {
        let mut chars = self.text.chars();
        matches!(chars.next(), Some(c) if c.is_uppercase()) && chars.next().is_some()
    }
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

fn is_open_quote(c: char) -> bool {
    matches!(c, '"' | '\u{201C}' | '\u{00AB}' | '\u{2018}' | '\'')
}

/// Splits prose into word tokens, marking the first word of each sentence.
/// Possessive suffixes are dropped (`Theo's` -> `Theo`).
fn tokenize(text: &str, first_is_initial: bool) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut at_start = first_is_initial;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_alphanumeric() {
            let start = pos;
            let mut j = i;
            while j < chars.len() {
                let cj = chars[j].1;
                let inner_apostrophe = is_apostrophe(cj)
                    && chars.get(j + 1).is_some_and(|(_, n)| n.is_alphanumeric());
                if cj.is_alphanumeric() || inner_apostrophe {
                    j += 1;
                } else {
                    break;
                }
            }
            let end = chars.get(j).map_or(text.len(), |(p, _)| *p);
            let mut word = &text[start..end];
            for suffix in ["'s", "\u{2019}s"] {
                if let Some(stem) = word.strip_suffix(suffix) {
                    word = stem;
                }
            }
            out.push(Token {
                text: word,
                sentence_initial: at_start,
            });
            at_start = false;
            i = j;
            continue;
        }
        match c {
            '.' | '!' | '?' | '\u{2026}' | '\n' => at_start = true,
            q if is_open_quote(q) => {
                let prev_is_space = i == 0 || chars[i - 1].1.is_whitespace();
                let next_is_word = chars.get(i + 1).is_some_and(|(_, n)| n.is_alphanumeric());
                if prev_is_space && next_is_word {
                    at_start = true;
                }
            }
            _ => {}
        }
        i += 1;
    }
    out
}

fn name_tokens<'a>(names: impl IntoIterator<Item = &'a str>) -> BTreeSet<String> {
    names
        .into_iter()
        .flat_map(|n| tokenize(n, false))
        .map(|t| t.text.to_string())
        .collect()
}

/// Capitalized words used mid-sentence in the narrative: the story's own
/// proper nouns.
fn story_proper_nouns(story: &str) -> BTreeSet<String> {
    tokenize(story, true)
        .into_iter()
        .filter(|t| t.is_capitalized() && !t.sentence_initial)
        .filter(|t| !CASE_STOP_LIST.contains(&t.text))
        .map(|t| t.text.to_string())
        .collect()
}

/// What a scene prompt is checked against.
#[derive(Debug, Clone, Default)]
pub struct SceneContext {
    pub character_names: BTreeSet<String>,
    pub story_names: BTreeSet<String>,
    pub style: Option<String>,
    pub image_specs: Option<String>,
}

impl SceneContext {
    pub fn new<'a>(
        character_names: impl IntoIterator<Item = &'a str>,
        style: Option<&str>,
        image_specs: Option<&str>,
    ) -> Self {
        Self {
            character_names: name_tokens(character_names),
            story_names: BTreeSet::new(),
            style: style.map(str::to_string),
            image_specs: image_specs.map(str::to_string),
        }
    }

    pub fn with_story(mut self, story: &str) -> Self {
        self.story_names = story_proper_nouns(story);
        self
    }

    fn exempt_tokens(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = CASE_STOP_LIST.iter().map(|s| s.to_string()).collect();
        for text in [&self.style, &self.image_specs].into_iter().flatten() {
            out.extend(tokenize(text, false).into_iter().map(|t| t.text.to_string()));
        }
        out
    }
}

/// Checks one scene prompt against the "<style> render of ..., <specs>"
/// shape and the lowercase-except-names rule. The opening word is not
/// exempt from the case rule; later sentence openers are.
pub fn lint_scene_format(scene: &str, text: &str, ctx: &SceneContext) -> Vec<Violation> {
    let mut out = Vec::new();
    let trimmed = text.trim();

    if let Some(style) = &ctx.style {
        let prefix = format!("{style} render of");
        let opens_with = |s: &str, p: &str| {
            s.get(..p.len()).is_some_and(|head| head == p)
                && s[p.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric())
        };
        let case_only = trimmed
            .get(..prefix.len())
            .is_some_and(|head| head.to_lowercase() == prefix.to_lowercase());
        if !opens_with(trimmed, &prefix) && !case_only {
            out.push(Violation::new(ViolationCode::SceneMissingStyle {
                scene: scene.to_string(),
            }));
        }
    }

    let exempt = ctx.exempt_tokens();
    let mut seen = BTreeSet::new();
    for token in tokenize(trimmed, false) {
        if !token.is_capitalized()
            || ctx.character_names.contains(token.text)
            || exempt.contains(token.text)
            || !seen.insert(token.text)
        {
            continue;
        }
        if ctx.story_names.contains(token.text) {
            out.push(Violation::new(ViolationCode::SceneUnknownName {
                scene: scene.to_string(),
                token: token.text.to_string(),
            }));
        } else if !token.sentence_initial {
            out.push(Violation::new(ViolationCode::SceneBadCase {
                scene: scene.to_string(),
                token: token.text.to_string(),
            }));
        }
    }

    if let Some(specs) = &ctx.image_specs {
        let body = trimmed.trim_end_matches(|c: char| c == '.' || c.is_whitespace());
        if !body.to_lowercase().ends_with(&specs.trim().to_lowercase()) {
            out.push(Violation::new(ViolationCode::SceneMissingSpecs {
                scene: scene.to_string(),
            }));
        }
    }
    out
}

/// Targets the book is checked against. Absent targets skip their checks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LintTargets {
    pub words_length: Option<u32>,
    pub style: Option<String>,
    pub image_specs: Option<String>,
}

impl From<&StoryRequest> for LintTargets {
    fn from(req: &StoryRequest) -> Self {
        Self {
            words_length: Some(req.words_length),
            style: Some(req.style.clone()),
            image_specs: Some(req.image_specs.clone()),
        }
    }
}

impl From<&PromptVariables> for LintTargets {
    fn from(vars: &PromptVariables) -> Self {
        Self {
            words_length: vars.words_length,
            style: vars.style.clone(),
            image_specs: vars.image_specs.clone(),
        }
    }
}

fn structure_violations(book: &StoryBook, words_length: Option<u32>) -> Vec<Violation> {
    let mut out = Vec::new();
    let scenes = book.image_descriptions.len();
    if scenes != 4 {
        out.push(ViolationCode::SceneCount { found: scenes }.into());
    }
    for (key, text) in &book.image_descriptions {
        let words = word_count(text);
        if words <= MIN_SCENE_WORDS {
            out.push(
                ViolationCode::SceneTooShort {
                    scene: key.clone(),
                    words,
                }
                .into(),
            );
        }
    }
    if let Some(target) = words_length {
        let actual = word_count(&book.story);
        let lo = f64::from(target) * (1.0 - STORY_LENGTH_TOLERANCE);
        let hi = f64::from(target) * (1.0 + STORY_LENGTH_TOLERANCE);
        let a = actual as f64;
        if a < lo || a > hi {
            out.push(ViolationCode::StoryLengthOff { actual, target }.into());
        }
    }
    for c in &book.characters {
        let words = word_count(&c.appearance);
        if !(CHAR_DESC_MIN_WORDS..=CHAR_DESC_MAX_WORDS).contains(&words) {
            out.push(
                ViolationCode::CharDescLength {
                    name: c.name.clone(),
                    words,
                }
                .into(),
            );
        }
    }
    if book.book_cover_description.trim().is_empty() {
        out.push(ViolationCode::CoverMissing {}.into());
    }
    out
}

fn consistency_violations(book: &StoryBook, targets: &LintTargets) -> Vec<Violation> {
    let mut out = Vec::new();
    let names = name_tokens(book.character_names());

    let mut seen = BTreeSet::new();
    for token in tokenize(&book.title, false) {
        if token.is_capitalized()
            && !names.contains(token.text)
            && !CASE_STOP_LIST.contains(&token.text)
            && !TITLE_STOP_LIST.contains(&token.text)
            && seen.insert(token.text)
        {
            out.push(
                ViolationCode::TitleNameUnknown {
                    name: token.text.to_string(),
                }
                .into(),
            );
        }
    }

    let ctx = SceneContext {
        character_names: names,
        story_names: BTreeSet::new(),
        style: targets.style.clone(),
        image_specs: targets.image_specs.clone(),
    }
    .with_story(&book.story);
    for (key, text) in &book.image_descriptions {
        out.extend(lint_scene_format(key, text, &ctx));
    }

    let scene_tokens: BTreeSet<&str> = book
        .image_descriptions
        .values()
        .flat_map(|t| tokenize(t, false))
        .map(|t| t.text)
        .collect();
    for c in &book.characters {
        let referenced = tokenize(&c.name, false)
            .iter()
            .any(|t| scene_tokens.contains(t.text));
        if !referenced {
            out.push(
                ViolationCode::CharUnreferenced {
                    name: c.name.clone(),
                }
                .into(),
            );
        }
    }
    out
}

/// Scene count, scene length, story length, character description length
/// and cover presence.
pub fn validate_structure(book: &StoryBook, request: &StoryRequest) -> ValidationReport {
    ValidationReport::from_violations(structure_violations(book, Some(request.words_length)))
}

/// Title names, scene capitalization, style prefix, specs suffix and
/// character references.
pub fn validate_consistency(book: &StoryBook, vars: &PromptVariables) -> ValidationReport {
    ValidationReport::from_violations(consistency_violations(book, &LintTargets::from(vars)))
}

/// Both passes against arbitrary targets.
pub fn lint_book(book: &StoryBook, targets: &LintTargets) -> ValidationReport {
    let mut all = structure_violations(book, targets.words_length);
    all.extend(consistency_violations(book, targets));
    ValidationReport::from_violations(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::story::{parse_story_response, CharacterProfile};

    fn ctx() -> SceneContext {
        SceneContext::new(["Lina"], Some("watercolor"), Some("vivid colors"))
    }

    const LINA: &str = "watercolor render of Lina riding a red car on a sunlit village road, a small dog running behind, vivid colors";

    #[test]
    fn conforming_scene_is_clean() {
        assert!(lint_scene_format("Image1", LINA, &ctx()).is_empty());
    }

    #[test]
    fn missing_style_prefix() {
        let v = lint_scene_format("Image1", "render of Lina on a road, vivid colors", &ctx());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code.name(), "SCENE_MISSING_STYLE");
    }

    #[test]
    fn capitalized_style_is_bad_case() {
        let text = LINA.replacen("watercolor", "Watercolor", 1);
        let v = lint_scene_format("Image1", &text, &ctx());
        assert_eq!(
            v.iter().map(|v| &v.code).collect::<Vec<_>>(),
            vec![&ViolationCode::SceneBadCase {
                scene: "Image1".into(),
                token: "Watercolor".into()
            }]
        );
    }

    #[test]
    fn capitalized_common_noun_is_bad_case() {
        let text = LINA.replace("village road", "road to the Castle");
        let v = lint_scene_format("Image1", &text, &ctx());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code.name(), "SCENE_BAD_CASE");
    }

    #[test]
    fn story_proper_noun_is_unknown_name() {
        let c = ctx().with_story("Lina lived in the town of Brightwood with her dog.");
        let text = LINA.replace("village road", "road in Brightwood");
        let v = lint_scene_format("Image1", &text, &c);
        assert_eq!(
            v[0].code,
            ViolationCode::SceneUnknownName {
                scene: "Image1".into(),
                token: "Brightwood".into()
            }
        );
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn sentence_openers_are_exempt_after_the_first() {
        let text = format!("{} The dog barks, vivid colors", LINA.replace(", vivid colors", "."));
        assert!(lint_scene_format("Image1", &text, &ctx()).is_empty());
    }

    #[test]
    fn missing_specs_suffix() {
        let text = LINA.replace(", vivid colors", "");
        let v = lint_scene_format("Image1", &text, &ctx());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code.name(), "SCENE_MISSING_SPECS");
        // a trailing period is tolerated
        assert!(lint_scene_format("Image1", &format!("{LINA}."), &ctx()).is_empty());
    }

    #[test]
    fn tokenizer_marks_sentence_starts_and_strips_possessives() {
        let toks = tokenize("Theo's car. \"Go!\" said Pip, \"We can.\"", true);
        let got: Vec<_> = toks.iter().map(|t| (t.text, t.sentence_initial)).collect();
        assert_eq!(
            got,
            vec![
                ("Theo", true),
                ("car", false),
                ("Go", true),
                ("said", true),
                ("Pip", false),
                ("We", true),
                ("can", false)
            ]
        );
    }

    #[test]
    fn valid_fixture_story_has_only_place_names_as_proper_nouns() {
        let book = parse_story_response(include_bytes!("../tests/fixtures/valid_book.json")).unwrap();
        let nouns = story_proper_nouns(&book.story);
        let expected: BTreeSet<String> =
            ["Brightwood", "Pip", "Theo"].into_iter().map(String::from).collect();
        assert_eq!(nouns, expected);
    }

    #[test]
    fn score_is_exact_in_tenths() {
        let r = ValidationReport::from_violations(vec![
            ViolationCode::CharUnreferenced { name: "x".into() }.into(),
            ViolationCode::SceneTooShort {
                scene: "Image1".into(),
                words: 3,
            }
            .into(),
        ]);
        assert_eq!(r.score, 0.7);
        let many: Vec<Violation> = (0..5).map(|_| ViolationCode::CoverMissing {}.into()).collect();
        assert_eq!(ValidationReport::from_violations(many).score, 0.0);
    }

    #[test]
    fn merge_is_concatenation() {
        let empty = ValidationReport::default();
        assert_eq!(merge_reports(&empty, &empty), empty);
        assert_eq!(empty.score, 1.0);
        let r1 = ValidationReport::from_violations(vec![ViolationCode::SceneBadCase {
            scene: "Image1".into(),
            token: "Castle".into(),
        }
        .into()]);
        let r2 = ValidationReport::from_violations(vec![ViolationCode::SceneMissingSpecs {
            scene: "Image2".into(),
        }
        .into()]);
        assert_eq!(merge_reports(&r1, &empty), r1);
        let m = merge_reports(&r1, &r2);
        assert_eq!(m.score, 0.5);
        assert_eq!(m.codes(), vec!["SCENE_BAD_CASE", "SCENE_MISSING_SPECS"]);
    }

    #[test]
    fn report_json_shape() {
        let r = ValidationReport::from_violations(vec![ViolationCode::SceneTooShort {
            scene: "Image2".into(),
            words: 40,
        }
        .into()]);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["score"], 0.8);
        assert_eq!(v["violations"][0]["code"], "SCENE_TOO_SHORT");
        assert_eq!(v["violations"][0]["severity"], "error");
        assert_eq!(v["violations"][0]["params"]["words"], 40);
        assert!(v["violations"][0]["message"].as_str().unwrap().contains("40"));
        let back: ValidationReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let cover = ValidationReport::from_violations(vec![ViolationCode::CoverMissing {}.into()]);
        let back: ValidationReport = serde_json::from_str(&cover.to_json()).unwrap();
        assert_eq!(back, cover);
    }

    #[test]
    fn unreferenced_character_is_a_warning() {
        let mut book =
            parse_story_response(include_bytes!("../tests/fixtures/valid_book.json")).unwrap();
        book.characters.push(CharacterProfile {
            name: "Grandpa Oak".into(),
            appearance: "a tall kind old man with a long white beard, round glasses, a green woolen sweater and brown trousers, human, drawn in soft watercolor".into(),
        });
        let r = lint_book(&book, &LintTargets::default());
        assert_eq!(r.codes(), vec!["CHAR_UNREFERENCED"]);
        assert!(!r.has_errors());
    }
}
