//! File-backed library of generated books.
//!
//! Layout: one directory per book, `{root}/{id}/` holding `book.json`,
//! `meta.json`, `report.json` and `images/{cover,image1..image4}.{ext}`.
//! A book is staged in `{root}/.staging-{id}-{nonce}/` and renamed into
//! place, so a reader sees either the whole entry or nothing. Names that
//! start with `.` are never listed.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ImageArtifact, ImageSource};
use crate::lint::ValidationReport;
use crate::pipeline::{GeneratedBook, ImageSlot, Provenance};
use crate::request::StoryRequest;
use crate::story::{parse_story_response, serialize_book};

pub const LIBRARY_DIR_ENV: &str = "FAIRYLAND_LIBRARY_DIR";
pub const DEFAULT_LIBRARY_DIR: &str = "./library";
pub const MAX_PAGE_LIMIT: usize = 100;

const STAGING_PREFIX: &str = ".staging-";
const TRASH_PREFIX: &str = ".trash-";
const ENOSPC: i32 = 28;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage is full")]
    StorageFull,
    #[error("book {0} already exists")]
    DuplicateId(String),
    #[error("unknown book {0}")]
    UnknownBook(String),
    #[error("book {id} is corrupt: {reason}")]
    CorruptEntry { id: String, reason: String },
    #[error("invalid book id `{0}`")]
    InvalidId(String),
    #[error("page limit {0} exceeds {MAX_PAGE_LIMIT}")]
    InvalidLimit(usize),
    #[error("book is missing image {0}")]
    MissingImage(String),
    #[error("injected fault at step {0}")]
    InjectedFault(usize),
    #[error("storage io: {0}")]
    Io(io::Error),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        if e.raw_os_error() == Some(ENOSPC) {
            StoreError::StorageFull
        } else {
            StoreError::Io(e)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookMeta {
    pub id: String,
    pub title: String,
    pub language: String,
    pub age: u32,
    pub element_1: String,
    pub style: String,
    pub created_at: DateTime<Utc>,
    pub score: f64,
}

impl BookMeta {
    pub fn of(book: &GeneratedBook) -> Self {
        Self {
            id: book.id.clone(),
            title: book.book.title.clone(),
            language: book.request.language.clone(),
            age: book.request.age,
            element_1: book.request.element_1.clone(),
            style: book.request.style.clone(),
            created_at: book.provenance.created_at,
            score: book.report.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StoredImage {
    file: String,
    prompt: String,
    media_type: String,
}

/// Contents of `meta.json`: the library listing fields plus what `get`
/// needs to rebuild the book without guessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetaRecord {
    #[serde(flatten)]
    meta: BookMeta,
    request: StoryRequest,
    provenance: Provenance,
    images: BTreeMap<ImageSlot, StoredImage>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ListFilter {
    pub language: Option<String>,
    /// Inclusive age bounds.
    pub age_range: Option<(u32, u32)>,
}

impl ListFilter {
    pub fn matches(&self, meta: &BookMeta) -> bool {
        self.language
            .as_deref()
            .is_none_or(|l| l.eq_ignore_ascii_case(&meta.language))
            && self
                .age_range
                .is_none_or(|(lo, hi)| (lo..=hi).contains(&meta.age))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Page {
    pub offset: usize,
    pub limit: usize,
}

impl Default for Page {
    fn default() -> Self {
        Self {
            offset: 0,
            limit: MAX_PAGE_LIMIT,
        }
    }
}

/// Simulated process death during `save`: the write sequence stops at step
/// `kill_at` (0-based) without cleanup. A write step that is killed leaves
/// the first half of its bytes on disk.
#[derive(Debug)]
pub struct FaultPlan {
    kill_at: usize,
    counter: AtomicUsize,
}

impl FaultPlan {
    pub fn kill_at(step: usize) -> Self {
        Self {
            kill_at: step,
            counter: AtomicUsize::new(0),
        }
    }

    /// Steps that ran, including the one that was killed.
    pub fn steps_taken(&self) -> usize {
        self.counter.load(Ordering::SeqCst)
    }

    fn step(&self) -> Option<usize> {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        (n == self.kill_at).then_some(n)
    }
}

struct Steps<'a>(Option<&'a FaultPlan>);

impl Steps<'_> {
    fn check(&self) -> Result<(), StoreError> {
        match self.0.and_then(FaultPlan::step) {
            Some(n) => Err(StoreError::InjectedFault(n)),
            None => Ok(()),
        }
    }

    fn write(&self, path: &Path, data: &[u8]) -> Result<(), StoreError> {
        if let Some(n) = self.0.and_then(FaultPlan::step) {
            fs::write(path, &data[..data.len() / 2])?;
            return Err(StoreError::InjectedFault(n));
        }
        let mut f = fs::File::create(path)?;
        f.write_all(data)?;
        self.check()?;
        f.sync_all()?;
        Ok(())
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub fn extension_for(media_type: &str) -> &'static str {
    match media_type {
        "image/png" => "png",
        "image/jpeg" | "image/jpg" => "jpg",
        "image/webp" => "webp",
        "image/gif" => "gif",
        _ => "bin",
    }
}

fn sync_dir(path: &Path) -> io::Result<()> {
    fs::File::open(path)?.sync_all()
}

type ImageBytes<'a> = (ImageSlot, &'a ImageArtifact, &'a [u8]);

#[derive(Debug)]
pub struct LibraryStore {
    root: PathBuf,
    update_lock: Mutex<()>,
}

impl LibraryStore {
    /// Opens (creating if needed) a library and removes staging leftovers
    /// from interrupted saves.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let store = Self {
            root,
            update_lock: Mutex::new(()),
        };
        store.sweep()?;
        Ok(store)
    }

    /// Root from `FAIRYLAND_LIBRARY_DIR`, else `./library`.
    pub fn default_root() -> PathBuf {
        std::env::var(LIBRARY_DIR_ENV)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_LIBRARY_DIR))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn sweep(&self) -> Result<(), StoreError> {
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with(STAGING_PREFIX) || name.starts_with(TRASH_PREFIX) {
                fs::remove_dir_all(entry.path())?;
            }
        }
        Ok(())
    }

    fn entry_dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        Ok(self.root.join(id))
    }

    pub fn save(&self, book: &GeneratedBook) -> Result<BookMeta, StoreError> {
        self.save_inner(book, Steps(None))
    }

    /// `save` with a simulated crash; see [`FaultPlan`].
    pub fn save_with_faults(&self, book: &GeneratedBook, plan: &FaultPlan) -> Result<BookMeta, StoreError> {
        self.save_inner(book, Steps(Some(plan)))
    }

    fn images_of(book: &GeneratedBook) -> Result<Vec<ImageBytes<'_>>, StoreError> {
        ImageSlot::ALL
            .into_iter()
            .map(|slot| {
                let art = book
                    .images
                    .get(&slot)
                    .ok_or_else(|| StoreError::MissingImage(slot.as_str().to_string()))?;
                let bytes = art
                    .payload()
                    .ok_or_else(|| StoreError::MissingImage(slot.as_str().to_string()))?;
                Ok((slot, art, bytes))
            })
            .collect()
    }

    fn record_for(book: &GeneratedBook) -> Result<MetaRecord, StoreError> {
        let images = Self::images_of(book)?
            .into_iter()
            .map(|(slot, art, _)| {
                (
                    slot,
                    StoredImage {
                        file: format!("images/{}.{}", slot.file_stem(), extension_for(&art.media_type)),
                        prompt: art.prompt.clone(),
                        media_type: art.media_type.clone(),
                    },
                )
            })
            .collect();
        Ok(MetaRecord {
            meta: BookMeta::of(book),
            request: book.request.clone(),
            provenance: book.provenance.clone(),
            images,
        })
    }

    fn save_inner(&self, book: &GeneratedBook, steps: Steps<'_>) -> Result<BookMeta, StoreError> {
        let final_dir = self.entry_dir(&book.id)?;
        if final_dir.exists() {
            return Err(StoreError::DuplicateId(book.id.clone()));
        }
        let record = Self::record_for(book)?;
        let images = Self::images_of(book)?;

        let staging = self.root.join(format!(
            "{STAGING_PREFIX}{}-{:016x}",
            book.id,
            rand::random::<u64>()
        ));
        steps.check()?;
        fs::create_dir(&staging)?;
        steps.check()?;
        fs::create_dir(staging.join("images"))?;

        steps.write(&staging.join("book.json"), serialize_book(&book.book).as_bytes())?;
        steps.write(&staging.join("report.json"), book.report.to_json().as_bytes())?;
        for (slot, _, bytes) in &images {
            steps.write(&staging.join(&record.images[slot].file), bytes)?;
        }
        let meta_json = serde_json::to_string_pretty(&record).expect("meta serializes");
        steps.write(&staging.join("meta.json"), meta_json.as_bytes())?;
        steps.check()?;
        sync_dir(&staging)?;

        steps.check()?;
        match fs::rename(&staging, &final_dir) {
            Ok(()) => {}
            Err(e) => {
                let _ = fs::remove_dir_all(&staging);
                if final_dir.exists() {
                    return Err(StoreError::DuplicateId(book.id.clone()));
                }
                return Err(e.into());
            }
        }
        steps.check()?;
        sync_dir(&self.root)?;
        Ok(record.meta)
    }

    fn read_record(&self, id: &str, dir: &Path) -> Result<MetaRecord, StoreError> {
        let raw = fs::read(dir.join("meta.json")).map_err(|e| StoreError::CorruptEntry {
            id: id.to_string(),
            reason: format!("meta.json: {e}"),
        })?;
        serde_json::from_slice(&raw).map_err(|e| StoreError::CorruptEntry {
            id: id.to_string(),
            reason: format!("meta.json: {e}"),
        })
    }

    pub fn get(&self, id: &str) -> Result<GeneratedBook, StoreError> {
        let dir = self.entry_dir(id).map_err(|_| StoreError::UnknownBook(id.to_string()))?;
        if !dir.is_dir() {
            return Err(StoreError::UnknownBook(id.to_string()));
        }
        let corrupt = |reason: String| StoreError::CorruptEntry {
            id: id.to_string(),
            reason,
        };
        let record = self.read_record(id, &dir)?;
        let raw = fs::read(dir.join("book.json")).map_err(|e| corrupt(format!("book.json: {e}")))?;
        let book = parse_story_response(&raw).map_err(|e| corrupt(format!("book.json: {e}")))?;
        let raw = fs::read(dir.join("report.json")).map_err(|e| corrupt(format!("report.json: {e}")))?;
        let report: ValidationReport =
            serde_json::from_slice(&raw).map_err(|e| corrupt(format!("report.json: {e}")))?;
        let mut images = BTreeMap::new();
        for (slot, stored) in &record.images {
            let bytes = fs::read(dir.join(&stored.file))
                .map_err(|e| corrupt(format!("{}: {e}", stored.file)))?;
            images.insert(
                *slot,
                ImageArtifact {
                    prompt: stored.prompt.clone(),
                    source: ImageSource::Bytes(bytes),
                    media_type: stored.media_type.clone(),
                },
            );
        }
        Ok(GeneratedBook {
            id: record.meta.id,
            request: record.request,
            book,
            images,
            report,
            provenance: record.provenance,
        })
    }

    /// Raw `book.json` bytes, as stored.
    pub fn book_json(&self, id: &str) -> Result<Vec<u8>, StoreError> {
        let dir = self.entry_dir(id).map_err(|_| StoreError::UnknownBook(id.to_string()))?;
        fs::read(dir.join("book.json")).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::UnknownBook(id.to_string()),
            _ => e.into(),
        })
    }

    /// Bytes and media type of one image.
    pub fn image(&self, id: &str, slot: ImageSlot) -> Result<(Vec<u8>, String), StoreError> {
        let dir = self.entry_dir(id).map_err(|_| StoreError::UnknownBook(id.to_string()))?;
        if !dir.is_dir() {
            return Err(StoreError::UnknownBook(id.to_string()));
        }
        let record = self.read_record(id, &dir)?;
        let stored = record
            .images
            .get(&slot)
            .ok_or_else(|| StoreError::MissingImage(slot.as_str().to_string()))?;
        let bytes = fs::read(dir.join(&stored.file))?;
        Ok((bytes, stored.media_type.clone()))
    }

    pub fn meta(&self, id: &str) -> Result<BookMeta, StoreError> {
        let dir = self.entry_dir(id).map_err(|_| StoreError::UnknownBook(id.to_string()))?;
        if !dir.is_dir() {
            return Err(StoreError::UnknownBook(id.to_string()));
        }
        Ok(self.read_record(id, &dir)?.meta)
    }

    /// Newest first; ties broken by id so pages are stable.
    pub fn list(&self, filter: &ListFilter, page: Page) -> Result<Vec<BookMeta>, StoreError> {
        if page.limit > MAX_PAGE_LIMIT {
            return Err(StoreError::InvalidLimit(page.limit));
        }
        let mut metas = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') || !entry.file_type()?.is_dir() {
                continue;
            }
            match self.read_record(&name, &entry.path()) {
                Ok(record) if filter.matches(&record.meta) => metas.push(record.meta),
                Ok(_) => {}
                Err(e) => tracing::warn!(id = %name, error = %e, "skipping unreadable library entry"),
            }
        }
        metas.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.id.cmp(&b.id)));
        Ok(metas.into_iter().skip(page.offset).take(page.limit).collect())
    }

    pub fn delete(&self, id: &str) -> Result<(), StoreError> {
        let dir = self.entry_dir(id).map_err(|_| StoreError::UnknownBook(id.to_string()))?;
        let trash = self.root.join(format!(
            "{TRASH_PREFIX}{id}-{:016x}",
            rand::random::<u64>()
        ));
        match fs::rename(&dir, &trash) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::UnknownBook(id.to_string()))
            }
            Err(e) => return Err(e.into()),
        }
        fs::remove_dir_all(&trash)?;
        Ok(())
    }

    /// Rewrites images, report and metadata of an existing entry. Each file
    /// is replaced by rename; `meta.json` goes last.
    pub fn update(&self, book: &GeneratedBook) -> Result<BookMeta, StoreError> {
        let _guard = self.update_lock.lock().expect("update lock");
        let dir = self.entry_dir(&book.id)?;
        if !dir.is_dir() {
            return Err(StoreError::UnknownBook(book.id.clone()));
        }
        let old = self.read_record(&book.id, &dir)?;
        let record = Self::record_for(book)?;
        let replace = |rel: &str, data: &[u8]| -> Result<(), StoreError> {
            let target = dir.join(rel);
            let tmp = dir.join(format!("{rel}.tmp"));
            let mut f = fs::File::create(&tmp)?;
            f.write_all(data)?;
            f.sync_all()?;
            fs::rename(&tmp, &target)?;
            Ok(())
        };
        for (slot, _, bytes) in Self::images_of(book)? {
            replace(&record.images[&slot].file, bytes)?;
        }
        replace("book.json", serialize_book(&book.book).as_bytes())?;
        replace("report.json", book.report.to_json().as_bytes())?;
        replace(
            "meta.json",
            serde_json::to_string_pretty(&record).expect("meta serializes").as_bytes(),
        )?;
        for (slot, stale) in &old.images {
            if record.images.get(slot).is_some_and(|new| new.file != stale.file) {
                let _ = fs::remove_file(dir.join(&stale.file));
            }
        }
        sync_dir(&dir.join("images"))?;
        Ok(record.meta)
    }
}
