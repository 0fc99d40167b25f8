//! Sandboxed execution of materialized computations.
//!
//! A [`Backend`] owns a job table, a FIFO queue and a fixed pool of worker
//! threads. Each job gets a private directory `<work_root>/<job id>/` with
//! the materialized input files in `work/` (the area shared with the runner)
//! and the full output streams in `logs/`.

mod oci;
mod outputs;
mod process;

use std::collections::{BTreeMap, VecDeque};
use std::os::unix::fs::DirBuilderExt;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finding::{has_errors, Finding};
use crate::paths::{check_relative, join_within};
use crate::substitute::{
    fill_defaults, render_computation, validate_bindings, BindingSet, MaterializedComputation,
    RenderError,
};
use crate::template::{ComputationTemplate, OutputDecl, RenderHint, PROCESS_IMAGE};

pub use oci::{run_args as oci_run_args, OciRunner, CONTAINER_WORKDIR};
pub use outputs::{collect_outputs, file_digest, match_output, read_tail, Collected, OutputArtifact};
pub use process::{ProcessRunner, CANCEL_GRACE};

pub type JobId = String;

/// Bound on the stdout/stderr text kept in a job snapshot.
pub const TAIL_BYTES: u64 = 256 * 1024;
/// How often outputs are re-scanned while a job runs.
pub const SCAN_INTERVAL: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KillReason {
    WallTimeout,
    CpuTimeout,
    Memory,
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed { exit_code: i32 },
    Killed { reason: KillReason },
}

impl JobState {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, Self::Queued | Self::Running)
    }

    /// Position in the life cycle; never decreases for a job.
    pub fn rank(&self) -> u8 {
        match self {
            Self::Queued => 0,
            Self::Running => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerReport {
    pub exit_code: Option<i32>,
    pub kill_reason: Option<KillReason>,
    pub wall_time_ms: u64,
    #[serde(default)]
    pub cpu_time_ms: Option<u64>,
    pub peak_memory_bytes: Option<u64>,
    /// Whether the job ran without host networking; `None` if unknown or
    /// networking was requested.
    #[serde(default)]
    pub network_isolated: Option<bool>,
}

/// Snapshot of a job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: JobId,
    pub template_id: String,
    /// Effective bindings, defaults included.
    pub bindings: BindingSet,
    #[serde(flatten)]
    pub state: JobState,
    pub runner: String,
    pub submitted_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub workdir: PathBuf,
    pub outputs: Vec<OutputArtifact>,
    /// Outputs seen so far while the job is running.
    pub intermediate_outputs: Vec<OutputArtifact>,
    pub stdout_tail: String,
    pub stderr_tail: String,
    pub report: Option<RunnerReport>,
    pub error: Option<String>,
    pub warnings: Vec<String>,
    /// Incremented on every change.
    pub revision: u64,
}

pub struct LogFiles {
    pub stdout: PathBuf,
    pub stderr: PathBuf,
}

/// Passed to a runner: cancellation flag and a periodic callback.
pub struct RunControl<'a> {
    cancel: &'a AtomicBool,
    on_tick: &'a (dyn Fn() + Sync),
    pub tick_interval: Duration,
}

impl<'a> RunControl<'a> {
    pub fn new(cancel: &'a AtomicBool, on_tick: &'a (dyn Fn() + Sync), tick_interval: Duration) -> Self {
        Self { cancel, on_tick, tick_interval }
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }

    pub fn tick(&self) {
        (self.on_tick)()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunnerError {
    #[error("no runner available for image `{0}`")]
    Unavailable(String),
    #[error("spawn failed: {0}")]
    SpawnFailure(String),
    #[error("monitoring failed: {0}")]
    Monitor(String),
}

/// Executes a materialized computation in `workdir`.
///
/// Implementations must be reentrant across distinct workdirs.
pub trait Runner: Send + Sync {
    fn name(&self) -> &'static str;
    fn check_available(&self, image_ref: &str) -> Result<(), RunnerError>;
    fn run(
        &self,
        m: &MaterializedComputation,
        workdir: &Path,
        logs: &LogFiles,
        ctl: &RunControl<'_>,
    ) -> Result<RunnerReport, RunnerError>;
}

/// Which runner executes a submission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunnerChoice {
    /// `process` for the process image reference, the container engine
    /// otherwise.
    #[default]
    Auto,
    /// Run the entry command locally whatever the image reference.
    Process,
    Oci,
}

#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub work_root: PathBuf,
    pub workers: usize,
    /// Container engine binary; `None` disables the container runner.
    pub engine: Option<String>,
    pub tail_bytes: u64,
    pub scan_interval: Duration,
}

impl BackendConfig {
    pub fn new(work_root: impl Into<PathBuf>) -> Self {
        Self {
            work_root: work_root.into(),
            workers: 2,
            engine: Some("docker".into()),
            tail_bytes: TAIL_BYTES,
            scan_interval: SCAN_INTERVAL,
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("bindings are invalid: {}", .0.iter().map(|f| f.message.as_str()).collect::<Vec<_>>().join("; "))]
    ValidationFailed(Vec<Finding>),
    #[error("no runner available for image `{0}`")]
    RunnerUnavailable(String),
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error("path rejected: {0}")]
    PathRejected(String),
    #[error("no output `{0}`")]
    OutputNotFound(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CancelOutcome {
    /// The job was still queued and will never run.
    Dequeued,
    /// The running job was signalled.
    Signalled,
    /// Nothing to do.
    AlreadyTerminal,
}

struct Entry {
    job: Job,
    cancel: Arc<AtomicBool>,
    materialized: Arc<MaterializedComputation>,
    outputs: Arc<Vec<OutputDecl>>,
    runner: Arc<dyn Runner>,
}

#[derive(Default)]
struct Table {
    jobs: BTreeMap<JobId, Entry>,
    queue: VecDeque<JobId>,
    shutdown: bool,
}

struct Shared {
    config: BackendConfig,
    process: Arc<dyn Runner>,
    oci: Option<Arc<dyn Runner>>,
    table: Mutex<Table>,
    work_ready: Condvar,
    changed: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Table> {
        self.table.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut Job)) {
        let mut table = self.lock();
        if let Some(e) = table.jobs.get_mut(id) {
            f(&mut e.job);
            e.job.revision += 1;
        }
        drop(table);
        self.changed.notify_all();
    }
}

/// Job service shared between threads.
pub struct Backend {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl Backend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let process: Arc<dyn Runner> = Arc::new(ProcessRunner::default());
        let oci = config.engine.clone().map(|e| Arc::new(OciRunner::new(e)) as Arc<dyn Runner>);
        Self::with_runners(config, process, oci)
    }

    /// Uses the given runners instead of the built-in ones.
    pub fn with_runners(
        config: BackendConfig,
        process: Arc<dyn Runner>,
        oci: Option<Arc<dyn Runner>>,
    ) -> Result<Self, BackendError> {
        std::fs::create_dir_all(&config.work_root)
            .map_err(|source| BackendError::Io { path: config.work_root.clone(), source })?;
        let workers = config.workers.max(1);
        let shared = Arc::new(Shared {
            config,
            process,
            oci,
            table: Mutex::default(),
            work_ready: Condvar::new(),
            changed: Condvar::new(),
        });
        let workers = (0..workers)
            .map(|i| {
                let shared = Arc::clone(&shared);
                std::thread::Builder::new()
                    .name(format!("replicator-worker-{i}"))
                    .spawn(move || worker(&shared))
                    .expect("spawn worker thread")
            })
            .collect();
        Ok(Self { shared, workers })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.shared.config
    }

    pub fn submit(&self, t: &ComputationTemplate, b: &BindingSet) -> Result<JobId, BackendError> {
        self.submit_with(t, b, RunnerChoice::Auto)
    }

    pub fn submit_with(
        &self,
        t: &ComputationTemplate,
        b: &BindingSet,
        choice: RunnerChoice,
    ) -> Result<JobId, BackendError> {
        let findings = validate_bindings(t, b);
        if has_errors(&findings) {
            return Err(BackendError::ValidationFailed(findings));
        }
        let runner = self.select_runner(&t.image_ref, choice)?;
        runner
            .check_available(&t.image_ref)
            .map_err(|_| BackendError::RunnerUnavailable(t.image_ref.clone()))?;
        let materialized = render_computation(t, b)?;

        let id = uuid::Uuid::new_v4().simple().to_string();
        let job_dir = self.shared.config.work_root.join(&id);
        let workdir = job_dir.join("work");
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| BackendError::Io { path, source }
        };
        std::fs::DirBuilder::new().mode(0o700).create(&job_dir).map_err(io(&job_dir))?;
        let write_all = || -> Result<(), BackendError> {
            std::fs::create_dir(&workdir).map_err(io(&workdir))?;
            std::fs::create_dir(job_dir.join("logs")).map_err(io(&job_dir))?;
            for f in &materialized.files {
                let path = join_within(&workdir, &f.path)
                    .ok_or_else(|| BackendError::PathRejected(f.path.clone()))?;
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(io(parent))?;
                }
                std::fs::write(&path, &f.content).map_err(io(&path))?;
            }
            Ok(())
        };
        if let Err(e) = write_all() {
            let _ = std::fs::remove_dir_all(&job_dir);
            return Err(e);
        }

        let job = Job {
            id: id.clone(),
            template_id: t.id.clone(),
            bindings: fill_defaults(t, b),
            state: JobState::Queued,
            runner: runner.name().to_owned(),
            submitted_at: Utc::now(),
            started_at: None,
            finished_at: None,
            workdir,
            outputs: Vec::new(),
            intermediate_outputs: Vec::new(),
            stdout_tail: String::new(),
            stderr_tail: String::new(),
            report: None,
            error: None,
            warnings: findings.iter().map(|f| f.message.clone()).collect(),
            revision: 0,
        };
        let entry = Entry {
            job,
            cancel: Arc::default(),
            materialized: Arc::new(materialized),
            outputs: Arc::new(t.outputs.clone()),
            runner,
        };
        let mut table = self.shared.lock();
        table.jobs.insert(id.clone(), entry);
        table.queue.push_back(id.clone());
        drop(table);
        self.shared.work_ready.notify_one();
        self.shared.changed.notify_all();
        Ok(id)
    }

    fn select_runner(&self, image_ref: &str, choice: RunnerChoice) -> Result<Arc<dyn Runner>, BackendError> {
        let use_process = match choice {
            RunnerChoice::Process => true,
            RunnerChoice::Oci => false,
            RunnerChoice::Auto => image_ref == PROCESS_IMAGE,
        };
        if use_process {
            return Ok(Arc::clone(&self.shared.process));
        }
        if image_ref == PROCESS_IMAGE {
            return Err(BackendError::RunnerUnavailable(image_ref.to_owned()));
        }
        self.shared
            .oci
            .clone()
            .ok_or_else(|| BackendError::RunnerUnavailable(image_ref.to_owned()))
    }

    pub fn status(&self, id: &str) -> Result<Job, BackendError> {
        let table = self.shared.lock();
        table.jobs.get(id).map(|e| e.job.clone()).ok_or_else(|| BackendError::UnknownJob(id.to_owned()))
    }

    /// Blocks until the job's revision exceeds `seen`, it is terminal, or
    /// `timeout` passes, and returns the current snapshot.
    pub fn wait_change(&self, id: &str, seen: Option<u64>, timeout: Duration) -> Result<Job, BackendError> {
        let deadline = Instant::now() + timeout;
        let mut table = self.shared.lock();
        loop {
            let job = &table.jobs.get(id).ok_or_else(|| BackendError::UnknownJob(id.to_owned()))?.job;
            let changed = seen.is_some_and(|s| job.revision > s);
            let now = Instant::now();
            if changed || job.state.is_terminal() || now >= deadline {
                return Ok(job.clone());
            }
            table = self
                .shared
                .changed
                .wait_timeout(table, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }

    /// Blocks until the job is terminal or `timeout` passes.
    pub fn wait(&self, id: &str, timeout: Duration) -> Result<Job, BackendError> {
        self.wait_change(id, None, timeout)
    }

    pub fn cancel(&self, id: &str) -> Result<CancelOutcome, BackendError> {
        let mut table = self.shared.lock();
        let entry = table.jobs.get_mut(id).ok_or_else(|| BackendError::UnknownJob(id.to_owned()))?;
        let outcome = match entry.job.state {
            s if s.is_terminal() => return Ok(CancelOutcome::AlreadyTerminal),
            JobState::Queued => {
                entry.job.state = JobState::Killed { reason: KillReason::Cancelled };
                entry.job.finished_at = Some(Utc::now());
                entry.job.revision += 1;
                table.queue.retain(|q| q != id);
                CancelOutcome::Dequeued
            }
            _ => {
                entry.cancel.store(true, Ordering::SeqCst);
                CancelOutcome::Signalled
            }
        };
        drop(table);
        self.shared.changed.notify_all();
        Ok(outcome)
    }

    /// All jobs, oldest first.
    pub fn list(&self) -> Vec<Job> {
        let table = self.shared.lock();
        let mut jobs: Vec<Job> = table.jobs.values().map(|e| e.job.clone()).collect();
        jobs.sort_by(|a, b| a.submitted_at.cmp(&b.submitted_at).then_with(|| a.id.cmp(&b.id)));
        jobs
    }

    /// Resolves a workdir-relative output path of job `id`.
    ///
    /// Only files matching the template's output declarations are served,
    /// and only if they resolve inside the workdir.
    pub fn output_path(&self, id: &str, rel: &str) -> Result<(PathBuf, RenderHint), BackendError> {
        let (workdir, decls) = {
            let table = self.shared.lock();
            let e = table.jobs.get(id).ok_or_else(|| BackendError::UnknownJob(id.to_owned()))?;
            (e.job.workdir.clone(), Arc::clone(&e.outputs))
        };
        check_relative(rel).map_err(|why| BackendError::PathRejected(format!("{rel}: {why}")))?;
        let hint = match_output(&decls, rel).ok_or_else(|| BackendError::OutputNotFound(rel.to_owned()))?;
        let path = join_within(&workdir, rel).ok_or_else(|| BackendError::PathRejected(rel.to_owned()))?;
        let resolved = path.canonicalize().map_err(|_| BackendError::OutputNotFound(rel.to_owned()))?;
        let root = workdir.canonicalize().map_err(|source| BackendError::Io { path: workdir.clone(), source })?;
        if !resolved.starts_with(&root) {
            return Err(BackendError::PathRejected(format!("{rel}: resolves outside the workdir")));
        }
        if !resolved.is_file() {
            return Err(BackendError::OutputNotFound(rel.to_owned()));
        }
        Ok((resolved, hint))
    }

    /// Path of the full stdout (`stderr == false`) or stderr log.
    pub fn log_path(&self, id: &str, stderr: bool) -> Result<PathBuf, BackendError> {
        let job = self.status(id)?;
        let dir = job.workdir.parent().map(|p| p.join("logs")).unwrap_or_default();
        Ok(dir.join(if stderr { "stderr.log" } else { "stdout.log" }))
    }

    /// Number of jobs currently running.
    pub fn running(&self) -> usize {
        self.shared.lock().jobs.values().filter(|e| e.job.state == JobState::Running).count()
    }
}

impl Drop for Backend {
    fn drop(&mut self) {
        {
            let mut table = self.shared.lock();
            table.shutdown = true;
            for e in table.jobs.values() {
                e.cancel.store(true, Ordering::SeqCst);
            }
        }
        self.shared.work_ready.notify_all();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn worker(shared: &Shared) {
    loop {
        let (id, m, decls, cancel, runner, workdir) = {
            let mut table = shared.lock();
            let id = loop {
                if table.shutdown {
                    return;
                }
                if let Some(id) = table.queue.pop_front() {
                    break id;
                }
                table = shared.work_ready.wait(table).unwrap_or_else(|p| p.into_inner());
            };
            let Some(e) = table.jobs.get_mut(&id) else { continue };
            if e.job.state != JobState::Queued {
                continue;
            }
            e.job.state = JobState::Running;
            e.job.started_at = Some(Utc::now());
            e.job.revision += 1;
            let picked = (
                id.clone(),
                Arc::clone(&e.materialized),
                Arc::clone(&e.outputs),
                Arc::clone(&e.cancel),
                Arc::clone(&e.runner),
                e.job.workdir.clone(),
            );
            drop(table);
            shared.changed.notify_all();
            picked
        };
        run_job(shared, &id, &m, &decls, &cancel, runner.as_ref(), &workdir);
    }
}

fn run_job(
    shared: &Shared,
    id: &str,
    m: &MaterializedComputation,
    decls: &[OutputDecl],
    cancel: &AtomicBool,
    runner: &dyn Runner,
    workdir: &Path,
) {
    let log_dir = workdir.parent().unwrap_or(workdir).join("logs");
    let logs = LogFiles { stdout: log_dir.join("stdout.log"), stderr: log_dir.join("stderr.log") };
    let tail = shared.config.tail_bytes;

    let refresh = || {
        let seen = collect_outputs(decls, workdir).artifacts;
        let (out, err) = (read_tail(&logs.stdout, tail), read_tail(&logs.stderr, tail));
        let mut table = shared.lock();
        if let Some(e) = table.jobs.get_mut(id) {
            if e.job.state == JobState::Running
                && (e.job.intermediate_outputs != seen || e.job.stdout_tail != out || e.job.stderr_tail != err)
            {
                e.job.intermediate_outputs = seen;
                e.job.stdout_tail = out;
                e.job.stderr_tail = err;
                e.job.revision += 1;
                drop(table);
                shared.changed.notify_all();
            }
        }
    };
    let ctl = RunControl::new(cancel, &refresh, shared.config.scan_interval);
    let result = std::panic::catch_unwind(AssertUnwindSafe(|| runner.run(m, workdir, &logs, &ctl)))
        .unwrap_or_else(|_| Err(RunnerError::Monitor("runner panicked".into())));

    let collected = collect_outputs(decls, workdir);
    let (stdout_tail, stderr_tail) = (read_tail(&logs.stdout, tail), read_tail(&logs.stderr, tail));
    shared.update(id, |job| {
        match result {
            Ok(report) => {
                job.state = match (report.kill_reason, report.exit_code) {
                    (Some(reason), _) => JobState::Killed { reason },
                    (None, Some(0)) => JobState::Succeeded,
                    (None, code) => JobState::Failed { exit_code: code.unwrap_or(-1) },
                };
                job.report = Some(report);
            }
            Err(e) => {
                job.state = JobState::Failed {
                    exit_code: if matches!(e, RunnerError::SpawnFailure(_)) { 127 } else { -1 },
                };
                job.error = Some(e.to_string());
            }
        }
        job.finished_at = Some(Utc::now());
        job.outputs = collected.artifacts;
        job.intermediate_outputs.clear();
        job.warnings.extend(collected.warnings);
        job.stdout_tail = stdout_tail;
        job.stderr_tail = stderr_tail;
    });
}
