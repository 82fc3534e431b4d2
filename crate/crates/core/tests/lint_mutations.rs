use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use fairyland_core::{
    lint_book, parse_story_response, CharacterProfile, LintTargets, Severity, StoryBook,
    StoryRequest,
};
use proptest::prelude::*;

const SUFFIX: &str = ", vivid colors";

fn load(name: &str) -> Vec<u8> {
    std::fs::read(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)).unwrap()
}

fn valid() -> StoryBook {
    parse_story_response(&load("valid_book.json")).unwrap()
}

fn targets() -> LintTargets {
    let req: StoryRequest = serde_json::from_slice(&load("request.json")).unwrap();
    LintTargets::from(&req)
}

fn scene<'a>(b: &'a mut StoryBook, key: &str) -> &'a mut String {
    b.image_descriptions.get_mut(key).unwrap()
}

type Mutation = (&'static str, fn(&mut StoryBook));

/// One edit per code. Each touches a different part of the book so any
/// subset can be applied together; the list order is the application order.
const MUTATIONS: [Mutation; 11] = [
    ("SCENE_COUNT", |b| {
        let copy = b.image_descriptions["Image1"].clone();
        b.image_descriptions.insert("Image5".into(), copy);
    }),
    ("SCENE_TOO_SHORT", |b| {
        let s = scene(b, "Image1");
        let head: Vec<&str> = s.trim_end_matches(SUFFIX).split_whitespace().take(40).collect();
        *s = format!("{}{SUFFIX}", head.join(" "));
    }),
    ("SCENE_MISSING_SPECS", |b| {
        let s = scene(b, "Image1");
        *s = s.trim_end_matches(SUFFIX).to_string();
    }),
    ("SCENE_MISSING_STYLE", |b| {
        let s = scene(b, "Image2");
        *s = s.replacen("watercolor render of", "a painting of", 1);
    }),
    ("SCENE_BAD_CASE", |b| {
        let s = scene(b, "Image3");
        *s = s.replacen("tiny round blue bus", "tiny round Blue bus", 1);
    }),
    ("SCENE_UNKNOWN_NAME", |b| {
        let s = scene(b, "Image4");
        *s = s.replacen("a calm sleeping village", "a calm sleeping Brightwood village", 1);
    }),
    ("COVER_MISSING", |b| b.book_cover_description.clear()),
    ("STORY_LENGTH_OFF", |b| b.story = format!("{}\n{}", b.story, b.story)),
    ("CHAR_DESC_LENGTH", |b| {
        let pip = &mut b.characters[1].appearance;
        *pip = pip.split_whitespace().take(10).collect::<Vec<_>>().join(" ");
    }),
    ("CHAR_UNREFERENCED", |b| {
        b.characters.push(CharacterProfile {
            name: "Wren".into(),
            appearance: "a tall grey heron with long thin legs, a sharp yellow beak, soft silver feathers and calm dark eyes, an animal, gentle and wise, drawn in watercolor style".into(),
        })
    }),
    ("TITLE_NAME_UNKNOWN", |b| b.title = "Theo and Max".into()),
];

/// Independent weight table in tenths of a point.
fn oracle_weight(code: &str) -> u32 {
    match code {
        "SCENE_COUNT" | "SCENE_MISSING_SPECS" | "COVER_MISSING" => 3,
        "SCENE_TOO_SHORT" | "SCENE_BAD_CASE" | "SCENE_UNKNOWN_NAME" | "SCENE_MISSING_STYLE" => 2,
        "STORY_LENGTH_OFF" | "CHAR_DESC_LENGTH" | "CHAR_UNREFERENCED" | "TITLE_NAME_UNKNOWN" => 1,
        other => panic!("unexpected code {other}"),
    }
}

fn oracle_score(codes: &[&str]) -> f64 {
    let total: u32 = codes.iter().map(|c| oracle_weight(c)).sum();
    f64::from(10 - total.min(10)) / 10.0
}

fn mutant(mask: u16) -> (StoryBook, Vec<&'static str>) {
    let mut b = valid();
    let mut codes = Vec::new();
    for (i, (code, apply)) in MUTATIONS.iter().enumerate() {
        if mask & (1 << i) != 0 {
            apply(&mut b);
            codes.push(*code);
        }
    }
    (b, codes)
}

fn sorted_codes(b: &StoryBook) -> Vec<&'static str> {
    let mut c = lint_book(b, &targets()).codes();
    c.sort();
    c
}

#[test]
fn valid_fixture_is_clean() {
    let report = lint_book(&valid(), &targets());
    assert!(report.violations.is_empty(), "{:#?}", report.violations);
    assert_eq!(report.score, 1.0);
}

#[test]
fn each_mutation_yields_its_code_exactly_once() {
    let started = Instant::now();
    let mut produced = BTreeMap::new();
    for (i, (code, _)) in MUTATIONS.iter().enumerate() {
        let (b, _) = mutant(1 << i);
        let report = lint_book(&b, &targets());
        assert_eq!(report.codes(), vec![*code], "{code}: {:#?}", report.violations);
        assert_eq!(report.score, oracle_score(&[code]), "{code}");
        *produced.entry(*code).or_insert(0) += 1;
    }
    assert_eq!(produced.len(), 11);
    assert!(produced.values().all(|n| *n == 1));
    assert!(started.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn severities_follow_the_weight_classes() {
    for (i, (code, _)) in MUTATIONS.iter().enumerate() {
        let (b, _) = mutant(1 << i);
        let report = lint_book(&b, &targets());
        let expected = if oracle_weight(code) >= 2 { Severity::Error } else { Severity::Warning };
        assert_eq!(report.violations[0].severity, expected, "{code}");
        assert_eq!(report.has_errors(), expected == Severity::Error);
    }
}

#[test]
fn every_mutation_at_once_floors_the_score() {
    let (b, codes) = mutant((1 << MUTATIONS.len()) - 1);
    let mut expected = codes.clone();
    expected.sort();
    assert_eq!(sorted_codes(&b), expected);
    assert_eq!(lint_book(&b, &targets()).score, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn composed_mutants_match_the_oracle(mask in 0u16..(1 << 11)) {
        let (b, codes) = mutant(mask);
        let mut expected = codes.clone();
        expected.sort();
        prop_assert_eq!(sorted_codes(&b), expected);
        prop_assert_eq!(lint_book(&b, &targets()).score, oracle_score(&codes));
    }

    #[test]
    fn adding_a_mutation_never_raises_the_score(mask in 0u16..(1 << 11), extra in 0usize..11) {
        let (small, _) = mutant(mask);
        let (big, _) = mutant(mask | (1 << extra));
        let t = targets();
        prop_assert!(lint_book(&big, &t).score <= lint_book(&small, &t).score);
    }
}
