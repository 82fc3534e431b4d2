//! Acceptance gate. Each criterion runs against its own oracle and time
//! bound and prints one PASS/FAIL line; the process fails if any line is FAIL.

use std::cmp::Reverse;
use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};
use fairyland_core::gateway::{
    record_replay, CassetteMode, Gateway, GatewayConfig, ImageArtifact, ImagePayload, ImageSource,
    ScriptedBackend, PLACEHOLDER_PNG,
};
use fairyland_core::store::FaultPlan;
use fairyland_core::story::SCENE_KEYS;
use fairyland_core::{
    lint_book, parse_story_response, render, serialize_book, BookMeta, CharacterProfile, Gender,
    GeneratedBook, ImageSlot, LibraryStore, LintTargets, ListFilter, Page, Pipeline, PipelinePolicy,
    PromptVariables, PromptVersionId, Provenance, StoreError, StoryBook, StoryRequest,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde_json::{json, Value};
use tempfile::TempDir;

fn core_tests(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests").join(rel)
}

fn read(rel: &str) -> Vec<u8> {
    let path = core_tests(rel);
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn valid_json() -> String {
    String::from_utf8(read("fixtures/valid_book.json")).unwrap()
}

fn valid_book() -> StoryBook {
    parse_story_response(&read("fixtures/valid_book.json")).unwrap()
}

fn fixture_request() -> StoryRequest {
    serde_json::from_slice(&read("fixtures/request.json")).unwrap()
}

fn within(started: Instant, limit: Duration) {
    let took = started.elapsed();
    assert!(took < limit, "took {took:?}, limit {limit:?}");
}

// Prompt goldens

fn prompt_goldens() {
    let started = Instant::now();
    let vars = PromptVariables {
        words_length: Some(1000),
        age: Some(5),
        gender: Some(Gender::Boy),
        element_1: Some("cars".into()),
        element_2: Some("magical".into()),
        style: Some("watercolor".into()),
        image_specs: Some("vivid colors".into()),
        language: Some("en".into()),
        timestamp: Some("1700000000-1".into()),
    };
    assert_eq!(PromptVersionId::ALL.len(), 6);
    for id in PromptVersionId::ALL {
        let rendered = render(id, &vars).unwrap().text;
        let golden = String::from_utf8(read(&format!("golden/{}.txt", id.file_stem()))).unwrap();
        assert_eq!(rendered, golden, "{} differs from its golden", id.as_str());
    }
    let p5 = render(PromptVersionId::P5, &vars).unwrap().text;
    for needle in ["5-year-old boy", "cars", "approximately 1000 words"] {
        assert!(p5.contains(needle), "P5 lacks {needle:?}");
    }
    within(started, Duration::from_secs(1));
}

// Contract parser

fn text() -> impl Strategy<Value = String> {
    prop_oneof!["[a-zA-Z ,.'!?]{1,60}", "\\PC{1,40}", "[\"\\\\/\n\t αβγ漢字🙂é]{1,30}"]
        .prop_filter("blank", |s| !s.trim().is_empty())
}

fn any_book() -> impl Strategy<Value = StoryBook> {
    (text(), prop::collection::vec((text(), text()), 1..5), text(), prop::collection::vec(text(), 4), text())
        .prop_map(|(title, chars, story, scenes, cover)| StoryBook {
            title,
            characters: chars.into_iter().map(|(name, appearance)| CharacterProfile { name, appearance }).collect(),
            story,
            image_descriptions: SCENE_KEYS.iter().map(|k| k.to_string()).zip(scenes).collect(),
            book_cover_description: cover,
        })
}

fn contract_parser() {
    let started = Instant::now();
    parse_story_response(&read("fixtures/valid_book.json")).unwrap();
    let seeded = [
        ("malformed_json", "MalformedJson"),
        ("missing_field", "MissingField"),
        ("wrong_scene_count", "WrongSceneCount"),
        ("empty_field", "EmptyField"),
        ("bad_encoding", "BadEncoding"),
    ];
    let kinds: Vec<&str> = seeded
        .iter()
        .map(|(file, _)| parse_story_response(&read(&format!("fixtures/parse_errors/{file}.json"))).unwrap_err().kind.name())
        .collect();
    for (_, kind) in seeded {
        assert_eq!(kinds.iter().filter(|k| **k == kind).count(), 1, "{kind} in {kinds:?}");
    }
    let mut runner = TestRunner::new(Config { cases: 200, failure_persistence: None, ..Config::default() });
    runner
        .run(&any_book(), |b| {
            let raw = serialize_book(&b);
            let back = parse_story_response(raw.as_bytes()).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&back, &b);
            prop_assert_eq!(serialize_book(&back), raw);
            Ok(())
        })
        .unwrap();
    within(started, Duration::from_secs(5));
}

// Lint mutations

const SUFFIX: &str = ", vivid colors";

type Mutation = (&'static str, fn(&mut StoryBook));

fn scene<'a>(b: &'a mut StoryBook, key: &str) -> &'a mut String {
    b.image_descriptions.get_mut(key).unwrap()
}

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

fn weight(code: &str) -> u32 {
    match code {
        "SCENE_COUNT" | "SCENE_MISSING_SPECS" | "COVER_MISSING" => 3,
        "SCENE_TOO_SHORT" | "SCENE_BAD_CASE" | "SCENE_UNKNOWN_NAME" | "SCENE_MISSING_STYLE" => 2,
        "STORY_LENGTH_OFF" | "CHAR_DESC_LENGTH" | "CHAR_UNREFERENCED" | "TITLE_NAME_UNKNOWN" => 1,
        other => panic!("unexpected code {other}"),
    }
}

fn expected_score(codes: &[&str]) -> f64 {
    let total: u32 = codes.iter().map(|c| weight(c)).sum();
    f64::from(10 - total.min(10)) / 10.0
}

fn mutant(base: &StoryBook, mask: u16) -> (StoryBook, Vec<&'static str>) {
    let mut b = base.clone();
    let mut codes = Vec::new();
    for (i, (code, apply)) in MUTATIONS.iter().enumerate() {
        if mask & (1 << i) != 0 {
            apply(&mut b);
            codes.push(*code);
        }
    }
    (b, codes)
}

fn lint_mutations() {
    let started = Instant::now();
    let targets = LintTargets::from(&fixture_request());
    let base = valid_book();
    assert!(lint_book(&base, &targets).violations.is_empty());
    for i in 0..MUTATIONS.len() {
        let (b, codes) = mutant(&base, 1 << i);
        let report = lint_book(&b, &targets);
        assert_eq!(report.codes(), codes, "mutation {}", codes[0]);
        assert_eq!(report.score, expected_score(&codes), "{}", codes[0]);
    }
    let full: u16 = (1 << MUTATIONS.len()) - 1;
    let scores: Vec<f64> = (0..=full).map(|mask| lint_book(&mutant(&base, mask).0, &targets).score).collect();
    for mask in 0..=full {
        for extra in 0..MUTATIONS.len() {
            let grown = mask | (1 << extra);
            let (small, big) = (scores[mask as usize], scores[grown as usize]);
            assert!(big <= small, "mask {mask:#x} + {extra} raised {small} to {big}");
        }
    }
    within(started, Duration::from_secs(5));
}

// Pipeline determinism

fn quiet_config() -> GatewayConfig {
    GatewayConfig { max_retries: 0, backoff_base: Duration::ZERO, ..GatewayConfig::default() }
}

fn pipeline_determinism() {
    let started = Instant::now();
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let replay = || {
            let backend = record_replay(CassetteMode::Replay, core_tests("cassettes/theo_and_pip.jsonl"), None).unwrap();
            Pipeline::new(Gateway::new(Arc::new(backend), quiet_config()).unwrap(), PipelinePolicy::default())
        };
        let req = fixture_request();
        let a = replay().generate_book(&req, None).await.unwrap();
        let b = replay().generate_book(&req, None).await.unwrap();
        let (da, db) = (TempDir::new().unwrap(), TempDir::new().unwrap());
        LibraryStore::open(da.path()).unwrap().save(&a).unwrap();
        LibraryStore::open(db.path()).unwrap().save(&b).unwrap();
        for file in ["book.json", "report.json"] {
            let fa = std::fs::read(da.path().join(&a.id).join(file)).unwrap();
            let fb = std::fs::read(db.path().join(&b.id).join(file)).unwrap();
            assert_eq!(fa, fb, "{file} differs between runs");
        }
        assert_eq!(a.images[&ImageSlot::Cover].prompt, a.book.book_cover_description);
        for key in SCENE_KEYS {
            let slot: ImageSlot = key.parse().unwrap();
            assert_eq!(a.images[&slot].prompt, a.book.image_descriptions[key], "{key}");
        }

        for max in [1u32, 2, 3] {
            let scripted = Arc::new(
                ScriptedBackend::new()
                    .with_chat(Ok("{\"title\": \"Theo".into()))
                    .with_chat(Ok(valid_json()))
                    .with_default_image(ImagePayload::Bytes { data: PLACEHOLDER_PNG.to_vec(), media_type: "image/png".into() }),
            );
            let p = Pipeline::new(
                Gateway::new(scripted.clone(), quiet_config()).unwrap(),
                PipelinePolicy { max_story_attempts: max, ..PipelinePolicy::default() },
            );
            let outcome = p.generate_book(&req, None).await;
            assert_eq!(scripted.chat_calls(), max.min(2) as usize, "max_story_attempts {max}");
            match max {
                1 => assert!(outcome.is_err()),
                _ => assert_eq!(outcome.unwrap().provenance.attempts, 2),
            }
        }
    });
    within(started, Duration::from_secs(10));
}

// Store

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 1, 1, 12, 0, 0).unwrap()
}

fn stored_book(n: u32, language: &str, age: u32, created_at: DateTime<Utc>) -> GeneratedBook {
    let mut request = fixture_request();
    request.language = language.into();
    request.age = age;
    let mut book = valid_book();
    book.title = format!("{} {n}", book.title);
    let images = ImageSlot::ALL
        .into_iter()
        .map(|slot| {
            let mut bytes = PLACEHOLDER_PNG.to_vec();
            bytes.extend_from_slice(format!("{n}/{slot}").as_bytes());
            let prompt = slot.prompt_in(&book).unwrap().to_string();
            (slot, ImageArtifact { prompt, source: ImageSource::Bytes(bytes), media_type: "image/png".into() })
        })
        .collect();
    let report = lint_book(&book, &LintTargets::from(&request));
    GeneratedBook {
        id: format!("{n:032x}"),
        request,
        book,
        images,
        report,
        provenance: Provenance {
            prompt_version: PromptVersionId::P5,
            prompt_hash: "0".repeat(64),
            chat_backend: "mock".into(),
            image_backend: "mock".into(),
            attempts: 1,
            created_at,
            regenerations: Vec::new(),
        },
    }
}

fn store_suite() {
    let started = Instant::now();

    let dir = TempDir::new().unwrap();
    let store = LibraryStore::open(dir.path()).unwrap();
    let book = stored_book(1, "en", 5, t0());
    store.save(&book).unwrap();
    assert_eq!(store.get(&book.id).unwrap(), book);
    for slot in ImageSlot::ALL {
        let (bytes, media) = store.image(&book.id, slot).unwrap();
        match &book.images[&slot].source {
            ImageSource::Bytes(expected) => assert_eq!(&bytes, expected, "{slot}"),
            other => panic!("{other:?}"),
        }
        assert_eq!(media, "image/png");
    }

    let probe_dir = TempDir::new().unwrap();
    let probe = FaultPlan::kill_at(usize::MAX);
    LibraryStore::open(probe_dir.path()).unwrap().save_with_faults(&stored_book(0, "en", 5, t0()), &probe).unwrap();
    let steps = probe.steps_taken();
    let crash_dir = TempDir::new().unwrap();
    for k in 0..100u32 {
        let victim = stored_book(1000 + k, "en", 5, t0());
        let visible = |store: &LibraryStore| {
            let listed = store.list(&ListFilter::default(), Page::default()).unwrap().iter().any(|m| m.id == victim.id);
            match store.get(&victim.id) {
                Ok(got) => {
                    assert_eq!(got, victim, "kill point {k} exposed a partial entry");
                    assert!(listed);
                    true
                }
                Err(StoreError::UnknownBook(_)) => {
                    assert!(!listed, "kill point {k} lists an unreadable entry");
                    false
                }
                Err(e) => panic!("kill point {k}: {e}"),
            }
        };
        let store = LibraryStore::open(crash_dir.path()).unwrap();
        let outcome = store.save_with_faults(&victim, &FaultPlan::kill_at(k as usize % steps));
        assert!(matches!(outcome, Err(StoreError::InjectedFault(_))), "kill point {k}");
        let before = visible(&store);
        drop(store);
        assert_eq!(visible(&LibraryStore::open(crash_dir.path()).unwrap()), before, "kill point {k}");
    }

    let list_dir = TempDir::new().unwrap();
    let store = LibraryStore::open(list_dir.path()).unwrap();
    let languages = ["en", "el", "de"];
    let mut all: Vec<BookMeta> = Vec::new();
    for n in 0..20u32 {
        let at = t0() + chrono::Duration::minutes(i64::from(n / 2));
        all.push(store.save(&stored_book(n, languages[(n % 3) as usize], 3 + n % 8, at)).unwrap());
    }
    let filters = [
        ListFilter::default(),
        ListFilter { language: Some("el".into()), age_range: None },
        ListFilter { language: Some("en".into()), age_range: Some((4, 7)) },
        ListFilter { language: None, age_range: Some((9, 12)) },
    ];
    for filter in &filters {
        for (offset, limit) in [(0, 100), (0, 4), (4, 4), (17, 10), (30, 3)] {
            let mut expected: Vec<BookMeta> = all
                .iter()
                .filter(|m| filter.language.as_ref().is_none_or(|l| &m.language == l))
                .filter(|m| filter.age_range.is_none_or(|(lo, hi)| m.age >= lo && m.age <= hi))
                .cloned()
                .collect();
            expected.sort_by_key(|m| (Reverse(m.created_at), m.id.clone()));
            let expected: Vec<BookMeta> = expected.into_iter().skip(offset).take(limit).collect();
            let page = Page { offset, limit };
            assert_eq!(store.list(filter, page).unwrap(), expected, "{filter:?} {page:?}");
        }
    }
    within(started, Duration::from_secs(30));
}

// API contract against the real binary

struct ServeProcess(Child);

impl Drop for ServeProcess {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn sha256_hex(s: &str) -> String {
    fairyland_server::hash_password(s)
}

fn api_contract() {
    let started = Instant::now();
    let library = TempDir::new().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_fairyland"))
        .args(["serve", "--backend", "mock"])
        .env("FAIRYLAND_USER", "operator")
        .env("FAIRYLAND_PASS_HASH", sha256_hex("correct horse"))
        .env("FAIRYLAND_LISTEN", "127.0.0.1:0")
        .env("FAIRYLAND_LIBRARY_DIR", library.path())
        .env_remove("FAIRYLAND_OPTIONS")
        .current_dir(library.path())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn fairyland serve");
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let _guard = ServeProcess(child);
    let base = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected banner {line:?}")).to_string();

    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let client = reqwest::Client::new();
        let url = |p: &str| format!("{base}{p}");

        let r = client.get(url("/v1/options")).send().await.unwrap();
        assert_eq!(r.status(), 401, "options without token");
        let r = client.post(url("/v1/books")).json(&json!({})).send().await.unwrap();
        assert_eq!(r.status(), 401, "POST without token");

        let r = client
            .post(url("/v1/auth/login"))
            .json(&json!({"username": "operator", "password": "correct horse"}))
            .send()
            .await
            .unwrap();
        assert_eq!(r.status(), 200);
        let token = r.json::<Value>().await.unwrap()["token"].as_str().unwrap().to_string();

        let options: Value = client.get(url("/v1/options")).bearer_auth(&token).send().await.unwrap().json().await.unwrap();
        assert!(options["themes"].as_array().unwrap().iter().any(|t| t == "medieval"), "{options}");

        let body = json!({
            "age": 5, "gender": "boy", "element_1": "cars", "element_2": "magical",
            "style": "watercolor", "language": "en", "words_length": 1000, "image_specs": "vivid colors"
        });
        let invalid: [(&str, Value); 7] = [
            ("age", json!(1)),
            ("age", json!("five")),
            ("gender", json!("dragon")),
            ("element_1", json!("")),
            ("element_2", json!(" ")),
            ("style", json!(7)),
            ("words_length", json!(5)),
        ];
        for (field, value) in invalid {
            let mut bad = body.clone();
            bad[field] = value.clone();
            let r = client.post(url("/v1/books")).bearer_auth(&token).json(&bad).send().await.unwrap();
            assert_eq!(r.status(), 400, "{field}={value}");
            let err: Value = r.json().await.unwrap();
            assert!(err["fields"].as_array().unwrap().iter().any(|f| f["field"] == field), "{field}: {err}");
        }
        let mut missing = body.clone();
        missing.as_object_mut().unwrap().remove("element_1");
        let r = client.post(url("/v1/books")).bearer_auth(&token).json(&missing).send().await.unwrap();
        assert_eq!(r.status(), 400, "missing element_1");

        let r = client.post(url("/v1/books")).bearer_auth(&token).json(&body).send().await.unwrap();
        assert_eq!(r.status(), 202);
        let job_id = r.json::<Value>().await.unwrap()["job_id"].as_str().unwrap().to_string();
        let deadline = Instant::now() + Duration::from_secs(20);
        let job = loop {
            let job: Value = client.get(url(&format!("/v1/jobs/{job_id}"))).bearer_auth(&token).send().await.unwrap().json().await.unwrap();
            if job["state"] == "done" || job["state"] == "failed" {
                break job;
            }
            assert!(Instant::now() < deadline, "job stuck: {job}");
            tokio::time::sleep(Duration::from_millis(25)).await;
        };
        assert_eq!(job["state"], "done", "{job}");
        let book_id = job["book_id"].as_str().unwrap().to_string();

        let r = client.get(url(&format!("/v1/books/{book_id}"))).bearer_auth(&token).send().await.unwrap();
        assert_eq!(r.status(), 200);
        let book: Value = r.json().await.unwrap();
        assert!(book["title"].is_string());
        for slot in ["cover", "image1", "image2", "image3", "image4"] {
            let r = client.get(url(&format!("/v1/books/{book_id}/images/{slot}"))).bearer_auth(&token).send().await.unwrap();
            assert_eq!(r.status(), 200, "{slot}");
            assert!(r.headers()["content-type"].to_str().unwrap().starts_with("image/"));
            assert!(!r.bytes().await.unwrap().is_empty(), "{slot} empty");
        }

        let r = client.delete(url(&format!("/v1/books/{book_id}"))).bearer_auth(&token).send().await.unwrap();
        assert_eq!(r.status(), 204);
        let r = client.get(url(&format!("/v1/books/{book_id}"))).bearer_auth(&token).send().await.unwrap();
        assert_eq!(r.status(), 404);
    });
    within(started, Duration::from_secs(30));
}

fn main() {
    let criteria: [(&str, fn()); 6] = [
        ("prompt golden suite", prompt_goldens),
        ("contract parser suite", contract_parser),
        ("lint mutation suite", lint_mutations),
        ("pipeline determinism", pipeline_determinism),
        ("store suite", store_suite),
        ("api contract suite", api_contract),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run));
        let took = started.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("PASS {name} ({took:.2}s)"),
            Err(panic) => {
                failed += 1;
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL {name} ({took:.2}s): {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
