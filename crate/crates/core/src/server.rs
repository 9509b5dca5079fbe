//! HTTP/JSON service: pipeline runs and their checkpoints, the human review
//! queue, the training job, and artifact download.
//!
//! Every error body is `{"code": ..., "message": ...}` with a stable code.
//! Request bodies are parsed by hand so malformed input maps to a 4xx code.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde_json::{json, Map, Value};

use crate::datafree::{
    datafree_train_with, resolve_review, DataFreeConfig, DataFreeError, DataFreeEvent,
    IterationReport, Resolution, ReviewItem, ReviewResolver, ReviewStatus,
};
use crate::judges::{HttpJudgeClient, JudgeClient};
use crate::pipeline::{
    create_run, AgentSuite, Artifact, HumanDecision, PipelineConfig, PipelineError, PipelineRun,
    RunInputs, StageId, TaskKind,
};
use crate::selfmod::ChainState;
use crate::store::{
    append_history, decode_tvid_b64, encode_tvid, history_path, persist_run, write_checkpoint,
    TrainMeta,
};
use crate::toyworld::{GrammarPrompts, Seed64};
use crate::video::{Frame, TextPrompt, Video};

pub const DEFAULT_HOST: &str = "127.0.0.1";
pub const DEFAULT_PORT: u16 = 7700;

/// Error codes, each with its HTTP status.
pub const ERROR_CODES: &[(&str, u16)] = &[
    ("bad_request", 400),
    ("input_mismatch", 400),
    ("bad_index", 400),
    ("bad_config", 400),
    ("not_found", 404),
    ("unknown_item", 404),
    ("empty_prompt", 422),
    ("wrong_stage", 409),
    ("not_awaiting", 409),
    ("retry_exhausted", 409),
    ("already_resolved", 409),
    ("training_active", 409),
    ("agent_failure", 500),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        let status = ERROR_CODES
            .iter()
            .find(|(c, _)| *c == code)
            .and_then(|(_, s)| StatusCode::from_u16(*s).ok())
            .unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new("bad_request", message)
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new("not_found", format!("{what} {id} not found"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({"code": self.code, "message": self.message})),
        )
            .into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::InputMismatch(_) => "input_mismatch",
            PipelineError::WrongStage { .. } | PipelineError::IllegalDecision { .. } => {
                "wrong_stage"
            }
            PipelineError::NotAwaitingDecision(_) | PipelineError::NotRunning(_) => "not_awaiting",
            PipelineError::RetryExhausted(_) => "retry_exhausted",
            PipelineError::InvalidConfig(_) => "bad_config",
            PipelineError::AgentFailure { .. } | PipelineError::MissingArtifact(_) => {
                "agent_failure"
            }
        };
        Self::new(code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum JobState {
    Running,
    AwaitingReview,
    Done,
    Failed,
}

impl JobState {
    fn name(self) -> &'static str {
        match self {
            JobState::Running => "running",
            JobState::AwaitingReview => "awaiting_review",
            JobState::Done => "done",
            JobState::Failed => "failed",
        }
    }

    fn is_active(self) -> bool {
        matches!(self, JobState::Running | JobState::AwaitingReview)
    }
}

#[derive(Debug, Clone)]
struct TrainingJob {
    state: JobState,
    iteration: usize,
    epoch: usize,
    last_loss: Option<f64>,
    alphas: BTreeMap<String, f64>,
    losses: Vec<f64>,
    alpha_history: BTreeMap<String, Vec<f64>>,
    iterations: Vec<IterationReport>,
    error: Option<String>,
}

struct QueuedItem {
    training_id: String,
    item: ReviewItem,
}

#[derive(Default)]
struct Registry {
    runs: HashMap<String, PipelineRun>,
    artifacts: HashMap<String, Vec<u8>>,
    /// Insertion-ordered review items, pending and resolved.
    reviews: Vec<QueuedItem>,
    jobs: HashMap<String, TrainingJob>,
}

impl Registry {
    fn pending_reviews(&self, training_id: &str) -> usize {
        self.reviews
            .iter()
            .filter(|q| q.training_id == training_id && q.item.status == ReviewStatus::PendingHuman)
            .count()
    }
}

/// Server-wide configuration.
#[derive(Clone)]
pub struct ServerOptions {
    pub data_dir: Option<PathBuf>,
    pub suite_seed: Seed64,
    pub judge_client: Arc<dyn JudgeClient>,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            data_dir: None,
            suite_seed: 0,
            judge_client: Arc::new(HttpJudgeClient::default()),
        }
    }
}

struct Shared {
    options: ServerOptions,
    suite: Mutex<AgentSuite>,
    registry: Mutex<Registry>,
    reviewed: Condvar,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(options: ServerOptions) -> Result<Self, crate::agents::AgentError> {
        let suite = AgentSuite::init(options.suite_seed)?;
        Ok(Self(Arc::new(Shared {
            options,
            suite: Mutex::new(suite),
            registry: Mutex::new(Registry::default()),
            reviewed: Condvar::new(),
        })))
    }

    fn registry(&self) -> MutexGuard<'_, Registry> {
        self.0.registry.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn suite(&self) -> AgentSuite {
        self.0.suite.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/runs", post(create_run_handler))
        .route("/v1/runs/{id}", get(get_run))
        .route("/v1/runs/{id}/decision", post(decision_handler))
        .route("/v1/review", get(review_queue))
        .route("/v1/review/{id}", post(review_decision))
        .route("/v1/training", post(start_training))
        .route("/v1/training/{id}", get(training_status))
        .route("/v1/artifacts/{id}", get(get_artifact))
        .fallback(|| async { ApiError::new("not_found", "no such endpoint") })
        .with_state(state)
}

/// Binds and serves until the process ends. `on_bound` receives the actual
/// address, so port 0 can be reported.
pub async fn serve(
    addr: SocketAddr,
    options: ServerOptions,
    on_bound: impl FnOnce(SocketAddr),
) -> std::io::Result<()> {
    let state = AppState::new(options).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

// ----------------------------------------------------------- body parsing

fn parse_object(body: &Bytes) -> ApiResult<Map<String, Value>> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(Map::new());
    }
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ApiError::bad_request("body must be a JSON object")),
        Err(e) => Err(ApiError::bad_request(format!("invalid JSON: {e}"))),
    }
}

fn opt_str<'a>(m: &'a Map<String, Value>, key: &str) -> ApiResult<Option<&'a str>> {
    match m.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(ApiError::bad_request(format!("{key} must be a string"))),
    }
}

fn req_str<'a>(m: &'a Map<String, Value>, key: &str) -> ApiResult<&'a str> {
    opt_str(m, key)?.ok_or_else(|| ApiError::bad_request(format!("{key} is required")))
}

fn opt_u64(m: &Map<String, Value>, key: &str) -> ApiResult<Option<u64>> {
    match m.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| ApiError::bad_request(format!("{key} must be a non-negative integer"))),
    }
}

fn decode_video(s: &str, what: &str) -> ApiResult<Video> {
    decode_tvid_b64(s).map_err(|e| ApiError::bad_request(format!("{what}: {e}")))
}

fn parse_inputs(m: &Map<String, Value>) -> ApiResult<RunInputs> {
    let prompt = match opt_str(m, "prompt")? {
        Some(p) if p.trim().is_empty() => {
            return Err(ApiError::new("empty_prompt", "prompt is empty"))
        }
        Some(p) => Some(TextPrompt::new(p).map_err(|e| ApiError::new("empty_prompt", e.to_string()))?),
        None => None,
    };
    let mut inputs = RunInputs {
        prompt,
        ..RunInputs::default()
    };
    let payload = match m.get("inputs") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(o)) => o.clone(),
        Some(_) => return Err(ApiError::bad_request("inputs must be an object")),
    };
    if let Some(f) = opt_str(&payload, "frame")? {
        let v = decode_video(f, "inputs.frame")?;
        if v.len() != 1 {
            return Err(ApiError::new(
                "input_mismatch",
                format!("inputs.frame must hold one frame, got {}", v.len()),
            ));
        }
        inputs.frame = Some(v.into_frames().remove(0));
    }
    match payload.get("videos") {
        None | Some(Value::Null) => {}
        Some(Value::Array(vs)) => {
            for (i, v) in vs.iter().enumerate() {
                let s = v
                    .as_str()
                    .ok_or_else(|| ApiError::bad_request("inputs.videos must hold strings"))?;
                inputs.videos.push(decode_video(s, &format!("inputs.videos[{i}]"))?);
            }
        }
        Some(_) => return Err(ApiError::bad_request("inputs.videos must be an array")),
    }
    Ok(inputs)
}

// ------------------------------------------------------------------ runs

fn artifact_id(run_id: &str, stage: StageId) -> String {
    format!("{run_id}-{}", stage.name())
}

fn artifact_url(id: &str) -> String {
    format!("/v1/artifacts/{id}")
}

fn run_view(run: &PipelineRun) -> Value {
    let artifacts: Map<String, Value> = run
        .artifacts
        .iter()
        .map(|(stage, a)| {
            let v = match a {
                Artifact::Prompt(p) => json!({"kind": "prompt", "text": p.text}),
                _ => {
                    let id = artifact_id(&run.run_id, *stage);
                    json!({"kind": a.kind(), "artifact_id": id, "url": artifact_url(&id)})
                }
            };
            (stage.name().to_string(), v)
        })
        .collect();
    let final_stage = match run.task {
        TaskKind::ConnectVideos => StageId::Connect,
        _ => StageId::GenerateVideo,
    };
    let final_artifact = run
        .final_video()
        .map(|_| artifact_url(&artifact_id(&run.run_id, final_stage)));
    json!({
        "run_id": run.run_id,
        "task": run.task,
        "stage": run.stage,
        "status": run.status,
        "retry_counts": run.retry_counts,
        "artifacts": artifacts,
        "final_artifact": final_artifact,
        "history": run.history,
    })
}

impl AppState {
    /// Registers artifacts and persists the run after a mutation.
    fn publish(&self, reg: &mut Registry, run: &PipelineRun) {
        for (stage, a) in &run.artifacts {
            if let Some(v) = a.as_video() {
                reg.artifacts
                    .insert(artifact_id(&run.run_id, *stage), encode_tvid(&v));
            }
        }
        if let Some(dir) = &self.0.options.data_dir {
            let _ = persist_run(run, &dir.join("runs").join(&run.run_id));
        }
    }
}

async fn create_run_handler(State(st): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let m = parse_object(&body)?;
    let task_name = req_str(&m, "task")?;
    let task = TaskKind::parse(task_name)
        .ok_or_else(|| ApiError::bad_request(format!("unknown task {task_name:?}")))?;
    let inputs = parse_inputs(&m)?;
    let mut config = PipelineConfig::default();
    if let Some(seed) = opt_u64(&m, "seed")? {
        config.seed = seed;
    }
    if let Some(t) = opt_u64(&m, "t_frames")? {
        if !(1..=64).contains(&t) {
            return Err(ApiError::new("bad_config", "t_frames must be in 1..=64"));
        }
        config.t_frames = t as usize;
    }
    let mut run = create_run(task, inputs, config)?;
    let suite = st.suite();
    let mut reg = st.registry();
    let outcome = run.advance(&suite);
    st.publish(&mut reg, &run);
    let view = run_view(&run);
    reg.runs.insert(run.run_id.clone(), run);
    outcome?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_run(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let reg = st.registry();
    let run = reg.runs.get(&id).ok_or_else(|| ApiError::not_found("run", &id))?;
    Ok(Json(run_view(run)))
}

async fn decision_handler(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let suite = st.suite();
    let mut reg = st.registry();
    if !reg.runs.contains_key(&id) {
        return Err(ApiError::not_found("run", &id));
    }
    let m = parse_object(&body)?;
    let stage_name = req_str(&m, "stage")?;
    let stage = StageId::parse(stage_name)
        .ok_or_else(|| ApiError::bad_request(format!("unknown stage {stage_name:?}")))?;
    let decision_name = req_str(&m, "decision")?;
    let decision = HumanDecision::parse(decision_name)
        .ok_or_else(|| ApiError::bad_request(format!("unknown decision {decision_name:?}")))?;
    let mut run = reg.runs.remove(&id).expect("checked above");
    let outcome = run
        .apply_decision(stage, decision)
        .and_then(|_| run.advance(&suite));
    st.publish(&mut reg, &run);
    let view = run_view(&run);
    reg.runs.insert(id, run);
    outcome?;
    Ok(Json(view))
}

// ---------------------------------------------------------------- review

fn candidate_artifact_id(item_id: &str, j: usize) -> String {
    format!("{item_id}-c{j}")
}

fn review_view(q: &QueuedItem) -> Value {
    let set = &q.item.candidate_set;
    let urls: Vec<String> = (0..set.candidates.len())
        .map(|j| artifact_url(&candidate_artifact_id(&q.item.item_id, j)))
        .collect();
    json!({
        "item_id": q.item.item_id,
        "training_id": q.training_id,
        "iteration": q.item.iteration,
        "prompt": set.prompt.text,
        "criterion": set.criterion,
        "candidate_urls": urls,
        "rankings": set.rankings,
        "status": q.item.status,
        "resolution": q.item.resolution,
    })
}

async fn review_queue(State(st): State<AppState>) -> Json<Value> {
    let reg = st.registry();
    let (pending, resolved): (Vec<&QueuedItem>, Vec<&QueuedItem>) = reg
        .reviews
        .iter()
        .partition(|q| q.item.status == ReviewStatus::PendingHuman);
    Json(json!({
        "items": pending.into_iter().map(review_view).collect::<Vec<_>>(),
        "resolved": resolved.into_iter().map(review_view).collect::<Vec<_>>(),
    }))
}

async fn review_decision(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let mut reg = st.registry();
    let pos = reg
        .reviews
        .iter()
        .position(|q| q.item.item_id == id)
        .ok_or_else(|| ApiError::new("unknown_item", format!("review item {id} not found")))?;
    let m = parse_object(&body)?;
    let decision = match (m.get("select"), m.get("discard")) {
        (Some(s), None) => {
            if let Some(i) = s.as_u64() {
                Resolution::Accepted(usize::try_from(i).unwrap_or(usize::MAX))
            } else if s.as_i64().is_some() {
                return Err(ApiError::new("bad_index", format!("index {s} is out of range 0..4")));
            } else {
                return Err(ApiError::bad_request("select must be an integer index"));
            }
        }
        (None, Some(Value::Bool(true))) => Resolution::Discarded,
        (None, Some(_)) => return Err(ApiError::bad_request("discard must be true")),
        _ => {
            return Err(ApiError::bad_request(
                "body must be {\"select\": index} or {\"discard\": true}",
            ))
        }
    };
    resolve_review(&mut reg.reviews[pos].item, decision).map_err(|e| match e {
        DataFreeError::AlreadyResolved(_) => ApiError::new("already_resolved", e.to_string()),
        DataFreeError::BadIndex(_) => ApiError::new("bad_index", e.to_string()),
        other => ApiError::bad_request(other.to_string()),
    })?;
    let view = review_view(&reg.reviews[pos]);
    drop(reg);
    st.0.reviewed.notify_all();
    Ok(Json(view))
}

// -------------------------------------------------------------- training

struct QueueResolver {
    state: AppState,
    training_id: String,
}

impl ReviewResolver for QueueResolver {
    fn resolve(&mut self, items: Vec<ReviewItem>) -> Result<Vec<ReviewItem>, DataFreeError> {
        let ids: Vec<String> = items.iter().map(|i| i.item_id.clone()).collect();
        let mut reg = self.state.registry();
        for item in items {
            for (j, c) in item.candidate_set.candidates.iter().enumerate() {
                reg.artifacts
                    .insert(candidate_artifact_id(&item.item_id, j), encode_tvid(c));
            }
            reg.reviews.push(QueuedItem {
                training_id: self.training_id.clone(),
                item,
            });
        }
        set_job_state(&mut reg, &self.training_id, JobState::AwaitingReview);
        let done = |reg: &Registry| {
            reg.reviews
                .iter()
                .filter(|q| ids.contains(&q.item.item_id))
                .all(|q| q.item.status == ReviewStatus::Resolved)
        };
        while !done(&reg) {
            reg = self
                .state
                .0
                .reviewed
                .wait(reg)
                .unwrap_or_else(|p| p.into_inner());
        }
        set_job_state(&mut reg, &self.training_id, JobState::Running);
        Ok(reg
            .reviews
            .iter()
            .filter(|q| ids.contains(&q.item.item_id))
            .map(|q| q.item.clone())
            .collect())
    }
}

fn set_job_state(reg: &mut Registry, id: &str, state: JobState) {
    if let Some(job) = reg.jobs.get_mut(id) {
        job.state = state;
    }
}

fn parse_training_config(body: &Bytes) -> ApiResult<DataFreeConfig> {
    let m = parse_object(body)?;
    let cfg = match m.get("config") {
        None | Some(Value::Null) => DataFreeConfig::default(),
        Some(v @ Value::Object(_)) => serde_json::from_value::<DataFreeConfig>(v.clone())
            .map_err(|e| ApiError::new("bad_config", e.to_string()))?,
        Some(_) => return Err(ApiError::new("bad_config", "config must be an object")),
    };
    cfg.validate()
        .map_err(|e| ApiError::new("bad_config", e.to_string()))?;
    Ok(cfg)
}

async fn start_training(State(st): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let cfg = parse_training_config(&body)?;
    let training_id = uuid::Uuid::new_v4().to_string();
    {
        let mut reg = st.registry();
        if reg.jobs.values().any(|j| j.state.is_active()) {
            return Err(ApiError::new("training_active", "a training job is already active"));
        }
        reg.jobs.insert(
            training_id.clone(),
            TrainingJob {
                state: JobState::Running,
                iteration: 0,
                epoch: 0,
                last_loss: None,
                alphas: BTreeMap::new(),
                losses: Vec::new(),
                alpha_history: BTreeMap::new(),
                iterations: Vec::new(),
                error: None,
            },
        );
    }
    let worker_state = st.clone();
    let id = training_id.clone();
    std::thread::spawn(move || run_training(worker_state, id, cfg));
    Ok((StatusCode::ACCEPTED, Json(json!({"training_id": training_id}))).into_response())
}

fn run_training(st: AppState, id: String, cfg: DataFreeConfig) {
    let observer_state = st.clone();
    let observer_id = id.clone();
    let mut observer = move |ev: DataFreeEvent<'_>| {
        let mut reg = observer_state.registry();
        let Some(job) = reg.jobs.get_mut(&observer_id) else { return };
        match ev {
            DataFreeEvent::IterationStarted(n) => job.iteration = n,
            DataFreeEvent::Batch { record, .. } => {
                job.epoch = record.epoch;
                job.last_loss = Some(record.loss);
                job.losses.push(record.loss);
                for (k, v) in &record.alpha {
                    job.alpha_history.entry(k.clone()).or_default().push(*v);
                }
                job.alphas = record.alpha.clone();
            }
            DataFreeEvent::IterationFinished(r) => job.iterations.push(r.clone()),
            DataFreeEvent::ReviewsQueued { .. } => {}
        }
    };
    let mut resolver = QueueResolver {
        state: st.clone(),
        training_id: id.clone(),
    };
    let client = st.0.options.judge_client.clone();
    let result = datafree_train_with(&cfg, &GrammarPrompts, &*client, &mut observer, &mut resolver);
    if let Ok(out) = &result {
        if let Ok(suite) = AgentSuite::with_trained(&out.state, st.0.options.suite_seed) {
            *st.0.suite.lock().unwrap_or_else(|p| p.into_inner()) = suite;
        }
        if let Some(dir) = &st.0.options.data_dir {
            let _ = save_training(dir, &id, &out.state, &cfg, &out.history);
        }
    }
    let mut reg = st.registry();
    if let Some(job) = reg.jobs.get_mut(&id) {
        match result {
            Ok(_) => job.state = JobState::Done,
            Err(e) => {
                job.state = JobState::Failed;
                job.error = Some(e.to_string());
            }
        }
    }
}

fn save_training(
    dir: &std::path::Path,
    id: &str,
    state: &ChainState,
    cfg: &DataFreeConfig,
    history: &[crate::selfmod::HistoryRecord],
) -> Result<(), crate::store::StoreError> {
    let out = dir.join("training").join(id);
    let meta = TrainMeta {
        iteration: cfg.iterations,
        epoch: cfg.iterations * cfg.train_cfg.epochs,
        seed: cfg.train_cfg.seed,
    };
    write_checkpoint(state, &cfg.train_cfg.chain, meta, &out)?;
    let mut log = Vec::new();
    for r in history {
        append_history(r, &mut log)?;
    }
    crate::store::write_atomic(&history_path(&out), &log)
}

async fn training_status(
    State(st): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    let reg = st.registry();
    let job = reg
        .jobs
        .get(&id)
        .ok_or_else(|| ApiError::not_found("training job", &id))?;
    Ok(Json(json!({
        "training_id": id,
        "state": job.state.name(),
        "iteration": job.iteration,
        "epoch": job.epoch,
        "last_loss": job.last_loss,
        "alphas": job.alphas,
        "pending_reviews": reg.pending_reviews(&id),
        "iterations": job.iterations,
        "losses": job.losses,
        "alpha_history": job.alpha_history,
        "error": job.error,
    })))
}

// ------------------------------------------------------------- artifacts

async fn get_artifact(
    State(st): State<AppState>,
    Path(id): Path<String>,
    RawQuery(query): RawQuery,
) -> ApiResult<Response> {
    let reg = st.registry();
    let bytes = reg
        .artifacts
        .get(&id)
        .ok_or_else(|| ApiError::not_found("artifact", &id))?;
    let b64 = query
        .as_deref()
        .unwrap_or("")
        .split('&')
        .any(|kv| kv == "enc=b64");
    if b64 {
        let data = base64::engine::general_purpose::STANDARD.encode(bytes);
        return Ok(Json(json!({"format": "tvid_b64", "data": data})).into_response());
    }
    Ok((
        [(header::CONTENT_TYPE, "application/octet-stream")],
        bytes.clone(),
    )
        .into_response())
}

/// Frame as a one-frame TVID, base64-encoded; handy for request bodies.
pub fn frame_b64(f: &Frame) -> String {
    crate::store::encode_tvid_b64(&Video::single(f.clone()))
}
