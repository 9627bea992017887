//! HTTP routes over a set of live sessions.
//!
//! Each session has one published snapshot that readers clone cheaply. A
//! writer (a run job, a steering change or the final scan) takes the session's
//! busy flag, mutates a private copy and republishes it after every journal
//! append, so a reader never observes a half-applied step.

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tapmobo::acquisition::SteeringState;
use tapmobo::pareto::ReferencePoint;
use tapmobo::session::{parse_jsonl, Hook, JournalRecord, SessionConfig, SessionState, Status};
use tokio::sync::broadcast;
use tokio_stream::wrappers::BroadcastStream;

use crate::error::{ApiError, ApiResult};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_RESOLUTION: usize = 50;
pub const MAX_RESOLUTION: usize = 400;
pub const WEIGHT_RANGE: (f64, f64) = (0.1, 2.0);

#[derive(Debug, Clone, Serialize)]
pub struct SessionHandle {
    pub id: String,
    /// Unix seconds.
    pub created_at: u64,
    pub config_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Seed,
    Step,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Running,
    Done,
    Failed,
    Cancelled,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobInfo {
    pub id: u64,
    pub mode: RunMode,
    pub n: Option<usize>,
    pub state: JobState,
    /// Observations acquired so far by this job.
    pub completed: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
struct Event {
    name: &'static str,
    data: String,
}

struct Entry {
    handle: SessionHandle,
    snapshot: RwLock<Arc<SessionState>>,
    busy: AtomicBool,
    /// Journal records already on disk.
    persisted: Mutex<usize>,
    last_job: Mutex<Option<JobInfo>>,
    events: broadcast::Sender<Event>,
}

impl Entry {
    fn new(handle: SessionHandle, state: SessionState, persisted: usize) -> Arc<Self> {
        let (events, _) = broadcast::channel(1024);
        Arc::new(Self {
            handle,
            snapshot: RwLock::new(Arc::new(state)),
            busy: AtomicBool::new(false),
            persisted: Mutex::new(persisted),
            last_job: Mutex::new(None),
            events,
        })
    }

    fn snapshot(&self) -> Arc<SessionState> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn publish(&self, s: &SessionState) {
        *self.snapshot.write().expect("snapshot lock") = Arc::new(s.clone());
    }

    fn emit(&self, name: &'static str, data: Value) {
        let _ = self.events.send(Event {
            name,
            data: data.to_string(),
        });
    }
}

/// Releases the session's busy flag when dropped.
struct BusyGuard(Arc<Entry>);

impl BusyGuard {
    fn acquire(entry: &Arc<Entry>) -> ApiResult<Self> {
        entry
            .busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map_err(|_| ApiError::busy())?;
        Ok(Self(entry.clone()))
    }
}

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

struct Inner {
    data_dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Entry>>>,
    stopping: AtomicBool,
    next_job: AtomicU64,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// FNV-1a over the canonical JSON form of the config.
pub fn config_digest(config: &SessionConfig) -> String {
    let text = serde_json::to_string(config).unwrap_or_default();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

impl AppState {
    /// An in-memory service that persists nothing.
    pub fn ephemeral() -> Self {
        Self::build(None)
    }

    /// A service journaling to `dir`, reloading any `{id}.jsonl` found there.
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let app = Self::build(Some(dir.clone()));
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            match load_journal(&path) {
                Ok((id, state)) => {
                    let handle = SessionHandle {
                        id: id.clone(),
                        created_at: now_secs(),
                        config_digest: config_digest(&state.config),
                    };
                    let n = state.journal.len();
                    app.0.sessions.write().expect("sessions lock").insert(id, Entry::new(handle, state, n));
                }
                Err(e) => eprintln!("skipping {}: {e}", path.display()),
            }
        }
        Ok(app)
    }

    fn build(data_dir: Option<PathBuf>) -> Self {
        Self(Arc::new(Inner {
            data_dir,
            sessions: RwLock::new(HashMap::new()),
            stopping: AtomicBool::new(false),
            next_job: AtomicU64::new(1),
        }))
    }

    pub fn data_dir(&self) -> Option<&FsPath> {
        self.0.data_dir.as_deref()
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.0.sessions.read().expect("sessions lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Asks running jobs to stop after their current acquisition.
    pub fn begin_shutdown(&self) {
        self.0.stopping.store(true, Ordering::Release);
    }

    /// Waits until no session has a writer, or `timeout` elapses.
    pub async fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let busy = self
                .0
                .sessions
                .read()
                .expect("sessions lock")
                .values()
                .any(|e| e.busy.load(Ordering::Acquire));
            if !busy {
                return true;
            }
            if tokio::time::Instant::now() >= deadline {
                return false;
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    fn entry(&self, id: &str) -> ApiResult<Arc<Entry>> {
        self.0
            .sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session `{id}`")))
    }

    fn stopping(&self) -> bool {
        self.0.stopping.load(Ordering::Acquire)
    }

    fn persist(&self, entry: &Entry, s: &SessionState) -> std::io::Result<()> {
        let mut done = entry.persisted.lock().expect("persist lock");
        if let Some(dir) = &self.0.data_dir {
            let tail = s
                .journal_tail(*done)
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join(format!("{}.jsonl", entry.handle.id)))?;
            f.write_all(tail.as_bytes())?;
            f.flush()?;
        }
        *done = s.journal.len();
        Ok(())
    }

    /// Runs `f` on a private copy of the session, persisting, publishing
    /// and broadcasting after every journal append. The copy becomes the
    /// published state only if `f` succeeds.
    fn mutate<T>(
        &self,
        entry: &Arc<Entry>,
        f: impl FnOnce(&mut SessionState, Hook<'_>) -> tapmobo::Result<T>,
    ) -> ApiResult<T> {
        let mut s = (*entry.snapshot()).clone();
        let mut io_error = None;
        let mut hook = |st: &SessionState, rec: &JournalRecord| {
            if let Err(e) = self.persist(entry, st) {
                io_error.get_or_insert(e);
            }
            entry.publish(st);
            entry.emit(rec.name(), record_event(st, rec));
        };
        let out = f(&mut s, &mut hook);
        if let Some(e) = io_error {
            return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string()));
        }
        let out = out?;
        entry.publish(&s);
        Ok(out)
    }

    fn execute(&self, entry: &Arc<Entry>, mut job: JobInfo) {
        let start = entry.snapshot().observations.len();
        let limit = job.n;
        let res = self.mutate(entry, |s, hook| match job.mode {
            RunMode::Seed => s.run_seeding_with(hook),
            RunMode::Step | RunMode::Auto => {
                if s.status == Status::Seeding {
                    s.run_seeding_with(&mut *hook)?;
                }
                let mut k = 0;
                while s.status == Status::Active && !self.stopping() && limit.is_none_or(|n| k < n) {
                    s.step_with(&mut *hook)?;
                    k += 1;
                }
                Ok(())
            }
        });
        job.completed = entry.snapshot().observations.len() - start;
        job.state = match &res {
            Ok(()) if self.stopping() => JobState::Cancelled,
            Ok(()) => JobState::Done,
            Err(e) => {
                job.error = Some(e.message.clone());
                JobState::Failed
            }
        };
        *entry.last_job.lock().expect("job lock") = Some(job.clone());
        entry.emit("job", json!(job));
    }
}

fn load_journal(path: &FsPath) -> tapmobo::Result<(String, SessionState)> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| tapmobo::Error::Parse("journal file name is not valid UTF-8".into()))?
        .to_string();
    let text = std::fs::read_to_string(path)?;
    let state = SessionState::from_journal(&parse_jsonl(&text)?)?;
    Ok((id, state))
}

fn record_event(s: &SessionState, rec: &JournalRecord) -> Value {
    match rec {
        JournalRecord::Seed(r) | JournalRecord::Step(r) => json!({
            "iteration": r.observation.iteration,
            "kind": r.observation.kind,
            "params": r.observation.params,
            "rewards": r.observation.rewards,
            "hv_current_ref": r.hv_current_ref,
            "hv_fixed_ref": r.hv_fixed_ref,
            "front": r.front,
            "status": s.status,
        }),
        other => json!(other),
    }
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}/run", post(run))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/state", get(state))
        .route("/sessions/{id}/predictions", get(predictions))
        .route("/sessions/{id}/steering", put(steering))
        .route("/sessions/{id}/final-scan", post(final_scan).get(get_final_scan))
        .route("/sessions/{id}/scan/{iteration}", get(scan))
        .route("/sessions/{id}/journal", get(journal))
        .with_state(app)
}

fn parse_config(body: &[u8]) -> ApiResult<SessionConfig> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(SessionConfig::default());
    }
    let value: Value = serde_json::from_slice(body).map_err(|e| ApiError::invalid(e.to_string()))?;
    let value = match value {
        Value::Object(mut m) if m.contains_key("config") => m.remove("config").unwrap_or(Value::Null),
        v => v,
    };
    if value.is_null() {
        return Ok(SessionConfig::default());
    }
    serde_json::from_value(value).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", e.to_string()))
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let config = parse_config(&body)?;
    let state = tokio::task::spawn_blocking(move || SessionState::create(config))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let handle = SessionHandle {
        id: uuid::Uuid::new_v4().to_string(),
        created_at: now_secs(),
        config_digest: config_digest(&state.config),
    };
    let entry = Entry::new(handle.clone(), state, 0);
    app.persist(&entry, &entry.snapshot())
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string()))?;
    app.0
        .sessions
        .write()
        .expect("sessions lock")
        .insert(handle.id.clone(), entry);
    Ok((StatusCode::CREATED, Json(handle)))
}

async fn list_sessions(State(app): State<AppState>) -> Json<Value> {
    let sessions = app.0.sessions.read().expect("sessions lock");
    let mut list: Vec<&SessionHandle> = sessions.values().map(|e| &e.handle).collect();
    list.sort_by(|a, b| a.id.cmp(&b.id));
    Json(json!({ "sessions": list }))
}

#[derive(Debug, Deserialize)]
struct RunRequest {
    mode: RunMode,
    n: Option<usize>,
}

async fn run(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<RunRequest>,
) -> ApiResult<impl IntoResponse> {
    let entry = app.entry(&id)?;
    if req.n == Some(0) {
        return Err(ApiError::invalid("n must be positive"));
    }
    let guard = BusyGuard::acquire(&entry)?;
    let status = entry.snapshot().status;
    let legal = match req.mode {
        RunMode::Seed => status == Status::Seeding,
        RunMode::Step => status == Status::Active,
        RunMode::Auto => matches!(status, Status::Seeding | Status::Active),
    };
    if !legal {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "invalid_state",
            format!("mode `{}` not allowed in state `{status}`", json!(req.mode).as_str().unwrap_or("")),
        ));
    }
    let job = JobInfo {
        id: app.0.next_job.fetch_add(1, Ordering::Relaxed),
        mode: req.mode,
        n: match req.mode {
            RunMode::Step => Some(req.n.unwrap_or(1)),
            _ => req.n,
        },
        state: JobState::Running,
        completed: 0,
        error: None,
    };
    *entry.last_job.lock().expect("job lock") = Some(job.clone());
    let worker = app.clone();
    let running = job.clone();
    tokio::task::spawn_blocking(move || {
        let _guard = guard;
        worker.execute(&entry, running);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job": job }))))
}

async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>> {
    let entry = app.entry(&id)?;
    let stream = BroadcastStream::new(entry.events.subscribe()).filter_map(|m| async move {
        m.ok().map(|e| Ok(SseEvent::default().event(e.name).data(e.data)))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn state(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let entry = app.entry(&id)?;
    let s = entry.snapshot();
    let last_job = entry.last_job.lock().expect("job lock").clone();
    Ok(Json(json!({
        "id": entry.handle.id,
        "status": s.status,
        "busy": entry.busy.load(Ordering::Acquire),
        "reward_names": s.config.reward_names(),
        "observations": s.observations,
        "pareto_front": s.pareto_front,
        "hv_history": s.hv_history,
        "steering": s.steering,
        "boundary": s.boundary,
        "global_min_height": s.global_min_height,
        "final_params": s.final_scan.as_ref().map(|f| &f.params),
        "last_job": last_job,
    })))
}

#[derive(Debug, Deserialize)]
struct PredictionQuery {
    reward: Option<String>,
    gain: Option<f64>,
    resolution: Option<usize>,
}

async fn predictions(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<PredictionQuery>,
) -> ApiResult<Json<Value>> {
    let entry = app.entry(&id)?;
    let reward = q.reward.ok_or_else(|| ApiError::invalid("query parameter `reward` is required"))?;
    let resolution = q.resolution.unwrap_or(DEFAULT_RESOLUTION);
    if !(2..=MAX_RESOLUTION).contains(&resolution) {
        return Err(ApiError::invalid(format!("resolution must lie in [2, {MAX_RESOLUTION}]")));
    }
    let s = entry.snapshot();
    let slice = tokio::task::spawn_blocking(move || s.predict_slice(&reward, q.gain, resolution))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(json!({ "resolution": resolution, "grid": slice })))
}

/// Field present with `null` clears the override; absent keeps it.
fn parse_steering(body: &Value, current: &SteeringState) -> ApiResult<(SteeringState, bool)> {
    let obj = body
        .as_object()
        .ok_or_else(|| ApiError::invalid("steering body must be a JSON object"))?;
    let force = match obj.get("force") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(ApiError::invalid("`force` must be a boolean")),
    };
    let mut next = current.clone();
    if let Some(w) = obj.get("weights").filter(|w| !w.is_null()) {
        next.weights = serde_json::from_value(w.clone()).map_err(|e| ApiError::invalid(format!("weights: {e}")))?;
    }
    if let Some(r) = obj.get("ref_override") {
        next.ref_override = match r {
            Value::Null => None,
            Value::Array(_) => Some(ReferencePoint {
                coords: serde_json::from_value(r.clone()).map_err(|e| ApiError::invalid(format!("ref_override: {e}")))?,
            }),
            _ => Some(serde_json::from_value(r.clone()).map_err(|e| ApiError::invalid(format!("ref_override: {e}")))?),
        };
    }
    Ok((next, force))
}

async fn steering(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<Value>,
) -> ApiResult<Json<Value>> {
    let entry = app.entry(&id)?;
    let (next, force) = parse_steering(&body, &entry.snapshot().steering)?;
    if !force {
        let (lo, hi) = WEIGHT_RANGE;
        if let Some(w) = next.weights.iter().find(|w| !(lo..=hi).contains(*w)) {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "weight_out_of_range",
                format!("weight {w} outside [{lo}, {hi}]; set `force` to override"),
            ));
        }
    }
    let guard = BusyGuard::acquire(&entry)?;
    let worker = app.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        let _guard = guard;
        worker.mutate(&entry, |s, hook| s.set_steering_with(next, hook))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(json!({
        "proposed_optimum": {
            "grid_index": outcome.proposal.index,
            "params": outcome.proposal.point,
            "score": outcome.proposal.score,
            "reference": outcome.proposal.reference,
        },
        "predicted_rewards": outcome.predicted_rewards,
    })))
}

async fn final_scan(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let entry = app.entry(&id)?;
    let guard = BusyGuard::acquire(&entry)?;
    let worker = app.clone();
    let fin = tokio::task::spawn_blocking(move || {
        let _guard = guard;
        worker.mutate(&entry, |s, hook| s.final_scan_with(hook).map(|f| f.clone()))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(json!({
        "grid_index": fin.grid_index,
        "params": fin.params,
        "score": fin.score,
        "predicted_rewards": fin.predicted_rewards,
        "image": fin.image.as_ref().map(|_| format!("/sessions/{id}/final-scan")),
    })))
}

async fn get_final_scan(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let entry = app.entry(&id)?;
    let s = entry.snapshot();
    let fin = s
        .final_scan
        .as_ref()
        .ok_or_else(|| ApiError::not_found("no final scan yet"))?;
    Ok(Json(json!(fin)))
}

async fn scan(State(app): State<AppState>, Path((id, iteration)): Path<(String, usize)>) -> ApiResult<Json<Value>> {
    let entry = app.entry(&id)?;
    let s = entry.snapshot();
    let lines = s
        .scan_batch(iteration)
        .ok_or_else(|| ApiError::not_found(format!("no scan for iteration {iteration}")))?;
    Ok(Json(json!({ "iteration": iteration, "lines": lines })))
}

async fn journal(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let entry = app.entry(&id)?;
    let text = entry.snapshot().journal_jsonl()?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text))
}

/// Per-status counts across sessions, for the startup banner.
pub fn status_summary(app: &AppState) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for e in app.0.sessions.read().expect("sessions lock").values() {
        *out.entry(e.snapshot().status.to_string()).or_insert(0) += 1;
    }
    out
}
