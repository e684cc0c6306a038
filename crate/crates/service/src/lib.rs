//! Race sessions stepped over HTTP, policy recommendations, optimizer jobs and
//! a per-session WebSocket feed of lap events.

pub mod error;
pub mod jobs;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock, TryLockError};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use racestrat::agent::{greedy_action, load_checkpoint, PolicyParams};
use racestrat::env::{AgentAction, ScenarioSpec, StepResult};
use racestrat::minlp::{BnbOptions, SearchSpace};
use racestrat::{RaceConfig, RaceState};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;
use uuid::Uuid;

pub use error::ApiError;
pub use jobs::{JobProblem, JobProgress, JobStatus, OptimizeJob, Snapshot};
pub use session::{LogRecord, Mode, PitProbability, Recommendation, Session, SessionResult, SessionView, Source, Status};

pub const ENV_DATA_DIR: &str = "RACESTRAT_DATA_DIR";
pub const ENV_ADDR: &str = "RACESTRAT_ADDR";
pub const ENV_CHECKPOINT: &str = "RACESTRAT_CHECKPOINT";
pub const ENV_OPTIMIZER_WORKERS: &str = "RACESTRAT_OPTIMIZER_WORKERS";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_DATA_DIR: &str = "racestrat-data";
const EVENT_BUFFER: usize = 1024;
const DEFAULT_TOP_K: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    pub data_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub optimizer_workers: usize,
}

impl ServiceConfig {
    /// Reads the environment, falling back to the defaults.
    pub fn from_env() -> anyhow::Result<Self> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        Ok(ServiceConfig {
            addr: var(ENV_ADDR).as_deref().unwrap_or(DEFAULT_ADDR).parse()?,
            data_dir: var(ENV_DATA_DIR).map_or_else(|| PathBuf::from(DEFAULT_DATA_DIR), PathBuf::from),
            checkpoint: var(ENV_CHECKPOINT).map(PathBuf::from),
            optimizer_workers: var(ENV_OPTIMIZER_WORKERS).map(|v| v.parse()).transpose()?.unwrap_or(1),
        })
    }
}

struct SessionSlot {
    session: Mutex<Session>,
    events: broadcast::Sender<String>,
}

impl SessionSlot {
    fn new(session: Session) -> Arc<Self> {
        Arc::new(SessionSlot { session: Mutex::new(session), events: broadcast::channel(EVENT_BUFFER).0 })
    }

    fn publish(&self, event: Value) {
        // No subscribers is fine.
        let _ = self.events.send(event.to_string());
    }
}

struct Inner {
    data_dir: PathBuf,
    policy: Option<Arc<PolicyParams>>,
    sessions: RwLock<HashMap<Uuid, Arc<SessionSlot>>>,
    jobs: RwLock<HashMap<Uuid, jobs::JobHandle>>,
    pool: jobs::JobPool,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Opens the data directory and restores the sessions and jobs found there.
    pub fn open(data_dir: &Path, policy: Option<PolicyParams>, optimizer_workers: usize) -> anyhow::Result<Self> {
        std::fs::create_dir_all(data_dir.join("sessions"))?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(data_dir.join("sessions"))? {
            let dir = entry?.path();
            match Session::restore(&dir) {
                Ok(s) => {
                    sessions.insert(s.id, SessionSlot::new(s));
                }
                Err(e) => log::warn!("skipping session {}: {e:#}", dir.display()),
            }
        }
        let jobs_dir = data_dir.join("jobs");
        let mut jobs = HashMap::new();
        if jobs_dir.is_dir() {
            for entry in std::fs::read_dir(&jobs_dir)? {
                let path = entry?.path();
                match std::fs::read(&path).map_err(anyhow::Error::from).and_then(|b| Ok(serde_json::from_slice::<OptimizeJob>(&b)?)) {
                    Ok(j) => {
                        jobs.insert(j.id, Arc::new(Mutex::new(j)));
                    }
                    Err(e) => log::warn!("skipping job {}: {e:#}", path.display()),
                }
            }
        }
        Ok(AppState(Arc::new(Inner {
            data_dir: data_dir.to_path_buf(),
            policy: policy.map(Arc::new),
            sessions: RwLock::new(sessions),
            jobs: RwLock::new(jobs),
            pool: jobs::JobPool::new(optimizer_workers, jobs_dir),
        })))
    }

    pub fn from_config(cfg: &ServiceConfig) -> anyhow::Result<Self> {
        let policy = match &cfg.checkpoint {
            Some(p) => Some(load_checkpoint(p)?.0),
            None => None,
        };
        Self::open(&cfg.data_dir, policy, cfg.optimizer_workers)
    }

    pub fn has_policy(&self) -> bool {
        self.0.policy.is_some()
    }

    fn slot(&self, id: Uuid) -> Result<Arc<SessionSlot>, ApiError> {
        self.0.sessions.read().expect("sessions lock").get(&id).cloned().ok_or_else(|| ApiError::not_found("session", id))
    }

    fn policy(&self) -> Result<Arc<PolicyParams>, ApiError> {
        self.0.policy.clone().ok_or_else(ApiError::no_checkpoint)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/step", post(step_session))
        .route("/sessions/{id}/disturbance", post(inject_disturbance))
        .route("/sessions/{id}/recommendation", get(recommendation))
        .route("/sessions/{id}/log", get(session_log))
        .route("/sessions/{id}/stream", get(stream))
        .route("/optimize", post(submit_optimize))
        .route("/optimize/{id}", get(job_status))
        .with_state(state)
}

/// Binds `cfg.addr` and serves until ctrl-c.
pub async fn serve(cfg: ServiceConfig) -> anyhow::Result<()> {
    let state = AppState::from_config(&cfg)?;
    let listener = tokio::net::TcpListener::bind(cfg.addr).await?;
    log::info!("listening on {} (data in {}, policy {})", listener.local_addr()?, cfg.data_dir.display(), if state.has_policy() { "loaded" } else { "absent" });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::unprocessable(e.to_string()))
}

fn parse_id(raw: &str, what: &str) -> Result<Uuid, ApiError> {
    raw.parse().map_err(|_| ApiError::not_found(what, raw))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateSession {
    pub spec: Option<ScenarioSpec>,
    /// Shorthand for a nominal spec.
    pub cfg: Option<RaceConfig>,
    pub mode: Mode,
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) { CreateSession::default() } else { parse(&body)? };
    let spec = match (req.spec, req.cfg) {
        (Some(_), Some(_)) => return Err(ApiError::unprocessable("give either spec or cfg")),
        (Some(s), None) => s,
        (None, c) => ScenarioSpec::nominal(c.unwrap_or_default()),
    };
    let data_dir = app.0.data_dir.clone();
    let session = blocking(move || Session::create(&data_dir, spec, req.mode)).await?;
    let view = session.view();
    app.0.sessions.write().expect("sessions lock").insert(session.id, SessionSlot::new(session));
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionView>, ApiError> {
    let slot = app.slot(parse_id(&id, "session")?)?;
    let view = slot.session.lock().expect("session lock").view();
    Ok(Json(view))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub source: Source,
    pub action: AgentAction,
    pub result: StepResult,
    pub state: RaceState,
    pub status: Status,
}

/// Body of a step: the string `"agent"` or an action object.
pub fn step_request(body: &[u8]) -> Result<Option<AgentAction>, ApiError> {
    match parse::<Value>(body)? {
        Value::String(s) if s == "agent" => Ok(None),
        v @ Value::Object(_) => {
            let a: AgentAction = serde_json::from_value(v).map_err(|e| ApiError::unprocessable(e.to_string()))?;
            session::validate_action(&a)?;
            Ok(Some(a))
        }
        _ => Err(ApiError::unprocessable("expected an action object or \"agent\"")),
    }
}

async fn step_session(State(app): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Json<StepResponse>, ApiError> {
    let slot = app.slot(parse_id(&id, "session")?)?;
    let submitted = step_request(&body)?;
    let policy = if submitted.is_none() { Some(app.policy()?) } else { app.0.policy.clone() };
    blocking(move || {
        let mut s = match slot.session.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(ApiError::conflict("another step is in flight, retry")),
            Err(TryLockError::Poisoned(_)) => return Err(ApiError::internal("session lock poisoned")),
        };
        if s.env.is_done() {
            return Err(ApiError::conflict("session is finished"));
        }
        let (action, source) = match submitted {
            Some(a) => (a, Source::Manual),
            None => {
                let p = policy.as_deref().expect("policy checked above");
                (greedy_action(&s.env.observation(), p).map_err(ApiError::internal)?, Source::Agent)
            }
        };
        let lap = s.env.lap();
        let result = s.step(action, source)?;
        let state = *s.env.state();
        let status = s.status();
        let rec = match (&policy, status) {
            (Some(p), Status::Running) => Some(session::recommend(p, &result.obs, s.env.lap(), DEFAULT_TOP_K)?),
            _ => None,
        };
        slot.publish(json!({
            "type": "lap", "session": s.id, "lap": lap, "source": source, "action": action,
            "result": result, "state": state, "status": status, "recommendation": rec,
        }));
        Ok(StepResponse { source, action, result, state, status })
    })
    .await
    .map(Json)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DisturbanceRequest {
    tw_delta: f64,
}

async fn inject_disturbance(State(app): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Json<SessionView>, ApiError> {
    let slot = app.slot(parse_id(&id, "session")?)?;
    let req: DisturbanceRequest = parse(&body)?;
    if !(req.tw_delta.is_finite() && (-1.0..=1.0).contains(&req.tw_delta)) {
        return Err(ApiError::unprocessable("tw_delta must lie in [-1, 1]"));
    }
    blocking(move || {
        let mut s = slot.session.lock().expect("session lock");
        let tw = s.inject(req.tw_delta)?;
        let view = s.view();
        slot.publish(json!({ "type": "disturbance", "session": s.id, "lap": view.lap, "tw_delta": req.tw_delta, "tw": tw }));
        Ok(view)
    })
    .await
    .map(Json)
}

#[derive(Debug, Clone, Deserialize)]
struct TopK {
    k: Option<usize>,
}

async fn recommendation(State(app): State<AppState>, UrlPath(id): UrlPath<String>, Query(q): Query<TopK>) -> Result<Json<Recommendation>, ApiError> {
    let slot = app.slot(parse_id(&id, "session")?)?;
    let policy = app.policy()?;
    let s = slot.session.lock().expect("session lock");
    if s.env.is_done() {
        return Err(ApiError::conflict("session is finished"));
    }
    Ok(Json(session::recommend(&policy, &s.env.observation(), s.env.lap(), q.k.unwrap_or(DEFAULT_TOP_K))?))
}

async fn session_log(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let slot = app.slot(parse_id(&id, "session")?)?;
    let path = slot.session.lock().expect("session lock").log_path();
    let bytes = tokio::fs::read(path).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response())
}

async fn stream(State(app): State<AppState>, UrlPath(id): UrlPath<String>, ws: WebSocketUpgrade) -> Result<Response, ApiError> {
    let slot = app.slot(parse_id(&id, "session")?)?;
    Ok(ws.on_upgrade(move |socket| feed(socket, slot)))
}

/// Sends the current state, then every event of the session. Incoming
/// messages other than close are ignored.
async fn feed(socket: WebSocket, slot: Arc<SessionSlot>) {
    let (mut tx, mut rx) = socket.split();
    let (mut events, hello) = {
        let s = slot.session.lock().expect("session lock");
        let mut v = serde_json::to_value(s.view()).unwrap_or(Value::Null);
        if let Value::Object(m) = &mut v {
            m.insert("type".into(), "state".into());
        }
        (slot.events.subscribe(), v.to_string())
    };
    if tx.send(Message::Text(hello.into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            ev = events.recv() => match ev {
                Ok(text) => {
                    if tx.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    if tx.send(Message::Text(json!({ "type": "lagged", "missed": n }).to_string().into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            msg = rx.next() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeRequest {
    pub cfg: Option<RaceConfig>,
    /// Re-solve the remaining laps of a live session.
    pub session: Option<Uuid>,
    pub snapshot: Option<Snapshot>,
    pub space: Option<SearchSpace>,
    pub options: Option<BnbOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submitted {
    pub id: Uuid,
    pub status: JobStatus,
}

async fn submit_optimize(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: OptimizeRequest = parse(&body)?;
    let (cfg, snapshot) = match req.session {
        Some(id) => {
            if req.cfg.is_some() || req.snapshot.is_some() {
                return Err(ApiError::unprocessable("session excludes cfg and snapshot"));
            }
            let slot = app.slot(id)?;
            let s = slot.session.lock().expect("session lock");
            if s.env.is_done() {
                return Err(ApiError::conflict("session is finished"));
            }
            let stops = s.stops();
            let snap = s.env.snapshot();
            (s.env.cfg().clone(), Some(Snapshot { k: snap.k, state: snap.state, stops_before: stops.len(), last_stop: stops.last().copied() }))
        }
        None => (req.cfg.unwrap_or_default(), req.snapshot),
    };
    let space = req.space.unwrap_or_else(|| SearchSpace::from_config(&cfg));
    let problem = JobProblem { cfg, space, snapshot, options: req.options.unwrap_or_default() };
    problem.build().map_err(ApiError::unprocessable)?;
    let job = OptimizeJob::new(problem);
    let out = Submitted { id: job.id, status: job.status };
    let handle = Arc::new(Mutex::new(job));
    app.0.jobs.write().expect("jobs lock").insert(out.id, handle.clone());
    app.0.pool.submit(handle);
    Ok((StatusCode::ACCEPTED, Json(out)).into_response())
}

async fn job_status(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<OptimizeJob>, ApiError> {
    let id = parse_id(&id, "job")?;
    let job = app.0.jobs.read().expect("jobs lock").get(&id).cloned().ok_or_else(|| ApiError::not_found("job", id))?;
    let j = job.lock().expect("job lock").clone();
    Ok(Json(j))
}
