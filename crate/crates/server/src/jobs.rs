//! Generation jobs: a table of job records and a bounded worker pool.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use fairyland_core::{
    LibraryStore, Pipeline, PipelineError, ProgressEvent, ProgressSink, Stage, StoryRequest,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

pub const DEFAULT_WORKERS: usize = 2;
pub const QUEUE_CAPACITY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    GeneratingStory,
    Validating,
    GeneratingImages,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }

    fn for_stage(stage: Stage) -> Option<JobState> {
        match stage {
            Stage::GeneratingStory => Some(JobState::GeneratingStory),
            Stage::Validating => Some(JobState::Validating),
            Stage::GeneratingImages => Some(JobState::GeneratingImages),
            Stage::Done => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobError {
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<Value>,
}

impl JobError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.to_string(),
            message: message.into(),
            report: None,
        }
    }

    pub fn from_pipeline(err: &PipelineError) -> Self {
        match err {
            PipelineError::StoryRejected { report, lineage, .. } => Self {
                kind: "story_rejected".into(),
                message: err.to_string(),
                report: Some(serde_json::json!({ "last_report": report, "lineage": lineage })),
            },
            PipelineError::InvalidRequest(_) | PipelineError::Prompt(_) => Self::new("invalid_request", err.to_string()),
            PipelineError::Gateway { .. } => Self::new("gateway", err.to_string()),
            PipelineError::UnknownBook(_) | PipelineError::Store(_) => Self::new("store", err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub state: JobState,
    pub book_id: Option<String>,
    pub error: Option<JobError>,
    pub progress: Vec<ProgressEvent>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

/// All jobs of this process. State only moves forward and terminal states
/// never change.
#[derive(Debug, Default)]
pub struct JobTable {
    jobs: Mutex<HashMap<String, Job>>,
}

impl JobTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&self) -> String {
        let id = hex::encode(rand::random::<[u8; 16]>());
        let now = Utc::now();
        let job = Job {
            id: id.clone(),
            state: JobState::Queued,
            book_id: None,
            error: None,
            progress: Vec::new(),
            created_at: now,
            updated_at: now,
        };
        self.jobs.lock().expect("jobs lock").insert(id.clone(), job);
        id
    }

    pub fn get(&self, id: &str) -> Option<Job> {
        self.jobs.lock().expect("jobs lock").get(id).cloned()
    }

    fn with_job(&self, id: &str, f: impl FnOnce(&mut Job)) {
        if let Some(job) = self.jobs.lock().expect("jobs lock").get_mut(id) {
            if !job.state.is_terminal() {
                f(job);
                job.updated_at = Utc::now();
            }
        }
    }

    pub fn record_progress(&self, id: &str, event: ProgressEvent) {
        self.with_job(id, |job| {
            job.progress.push(event);
            if let Some(next) = JobState::for_stage(event.stage) {
                job.state = job.state.max(next);
            }
        });
    }

    pub fn finish(&self, id: &str, book_id: String) {
        self.with_job(id, |job| {
            job.state = JobState::Done;
            job.book_id = Some(book_id);
        });
    }

    pub fn fail(&self, id: &str, error: JobError) {
        self.with_job(id, |job| {
            job.state = JobState::Failed;
            job.error = Some(error);
        });
    }

    /// Fails every job that has not finished.
    pub fn fail_unfinished(&self, error: &JobError) -> usize {
        let mut jobs = self.jobs.lock().expect("jobs lock");
        let mut n = 0;
        for job in jobs.values_mut().filter(|j| !j.state.is_terminal()) {
            job.state = JobState::Failed;
            job.error = Some(error.clone());
            job.updated_at = Utc::now();
            n += 1;
        }
        n
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error("job queue is full")]
    Full,
    #[error("service is shutting down")]
    Closed,
}

struct Work {
    job_id: String,
    request: StoryRequest,
}

/// Fixed number of workers draining a bounded queue.
pub struct WorkerPool {
    table: Arc<JobTable>,
    tx: Mutex<Option<mpsc::Sender<Work>>>,
    stopping: Arc<AtomicBool>,
    handles: Mutex<Vec<JoinHandle<()>>>,
}

impl WorkerPool {
    pub fn start(workers: usize, pipeline: Pipeline, store: Arc<LibraryStore>, table: Arc<JobTable>) -> Self {
        let (tx, rx) = mpsc::channel::<Work>(QUEUE_CAPACITY);
        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        let stopping = Arc::new(AtomicBool::new(false));
        let handles = (0..workers.max(1))
            .map(|_| {
                let rx = rx.clone();
                let pipeline = pipeline.clone();
                let store = store.clone();
                let table = table.clone();
                let stopping = stopping.clone();
                tokio::spawn(async move {
                    loop {
                        let next = rx.lock().await.recv().await;
                        let Some(work) = next else { break };
                        if stopping.load(Ordering::SeqCst) {
                            table.fail(&work.job_id, JobError::new("shutdown", "service shut down before the job started"));
                            continue;
                        }
                        run_job(&pipeline, &store, &table, work).await;
                    }
                })
            })
            .collect();
        Self {
            table,
            tx: Mutex::new(Some(tx)),
            stopping,
            handles: Mutex::new(handles),
        }
    }

    pub fn submit(&self, request: StoryRequest) -> Result<String, SubmitError> {
        let guard = self.tx.lock().expect("queue lock");
        let tx = guard.as_ref().ok_or(SubmitError::Closed)?;
        let job_id = self.table.create();
        let work = Work { job_id: job_id.clone(), request };
        match tx.try_send(work) {
            Ok(()) => Ok(job_id),
            Err(e) => {
                let reason = match e {
                    mpsc::error::TrySendError::Full(_) => SubmitError::Full,
                    mpsc::error::TrySendError::Closed(_) => SubmitError::Closed,
                };
                self.table.fail(&job_id, JobError::new("rejected", reason.to_string()));
                Err(reason)
            }
        }
    }

    /// Stops intake, lets running jobs finish for up to `grace`, then fails
    /// whatever is left.
    pub async fn shutdown(&self, grace: Duration) {
        self.stopping.store(true, Ordering::SeqCst);
        self.tx.lock().expect("queue lock").take();
        let handles: Vec<_> = std::mem::take(&mut *self.handles.lock().expect("handles lock"));
        let aborts: Vec<_> = handles.iter().map(|h| h.abort_handle()).collect();
        if tokio::time::timeout(grace, futures_join(handles)).await.is_err() {
            for a in aborts {
                a.abort();
            }
        }
        let failed = self.table.fail_unfinished(&JobError::new("shutdown", "service shut down before the job finished"));
        if failed > 0 {
            tracing::warn!(failed, "jobs failed at shutdown");
        }
    }
}

async fn futures_join(handles: Vec<JoinHandle<()>>) {
    for h in handles {
        let _ = h.await;
    }
}

async fn run_job(pipeline: &Pipeline, store: &Arc<LibraryStore>, table: &Arc<JobTable>, work: Work) {
    let Work { job_id, request } = work;
    let sink: ProgressSink = {
        let table = table.clone();
        let job_id = job_id.clone();
        Arc::new(move |event| table.record_progress(&job_id, event))
    };
    tracing::info!(job = %job_id, "job started");
    match pipeline.generate_book(&request, Some(&sink)).await {
        Ok(book) => {
            let store = store.clone();
            let saved = tokio::task::spawn_blocking(move || store.save(&book).map(|meta| meta.id)).await;
            match saved {
                Ok(Ok(book_id)) => {
                    tracing::info!(job = %job_id, book = %book_id, "job done");
                    table.finish(&job_id, book_id);
                }
                Ok(Err(e)) => table.fail(&job_id, JobError::new("store", e.to_string())),
                Err(e) => table.fail(&job_id, JobError::new("internal", e.to_string())),
            }
        }
        Err(e) => {
            tracing::info!(job = %job_id, error = %e, "job failed");
            table.fail(&job_id, JobError::from_pipeline(&e));
        }
    }
}
