//! HTTP API over `leveler-core` for the curator workbench.
//!
//! Endpoints return the library's own serializations: a `/score` body is a
//! [`ReadabilityReport`], `/align` an [`AlignmentMap`], `/bank` a list of
//! [`Candidate`]s. Errors carry `{"error": {"code", "message"}}`.

pub mod error;
pub mod session;

use std::collections::HashMap;
use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use leveler_core::alignment::{self, AlignmentMap, LockSpan, Replacement};
use leveler_core::corpus::{LeveledPair, Split};
use leveler_core::harness::{
    self, BankFilter, BenchCorpus, BenchEnv, Candidate, HarnessError, MetricsPatch, ResponseBank, RunRecord,
    RunSpec, RunStore,
};
use leveler_core::metrics::{self, RunReport};
use leveler_core::prompting::{PromptMethod, PromptTemplates, DEFAULT_WINDOW};
use leveler_core::providers::{self, Embedder, Provider, ProviderConfig, Transport};
use leveler_core::readability::{ReadabilityReport, Scorer};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use error::ApiError;
use session::{Session, SessionView, DEFAULT_HISTORY};

/// Everything the service serves from.
pub struct Workbench {
    pub scorer: Scorer,
    pub templates: PromptTemplates,
    pub corpus: BenchCorpus,
    pub bank: Arc<ResponseBank>,
    pub runs: RunStore,
    /// Providers `/generate` may name.
    pub providers: Vec<ProviderConfig>,
    pub transport: Arc<dyn Transport>,
    /// Used for the embedding metrics patched in after generation.
    pub embedder: Option<Arc<dyn Embedder>>,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub history_limit: usize,
    /// Where sessions are snapshotted as JSONL; `None` keeps them in memory only.
    pub snapshot_path: Option<PathBuf>,
    pub snapshot_interval: Duration,
    /// Allowed browser origin; `None` allows any.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            history_limit: DEFAULT_HISTORY,
            snapshot_path: None,
            snapshot_interval: Duration::from_secs(30),
            cors_origin: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingState {
    Pending,
    Done,
    Skipped,
}

/// Handle returned by `/generate` and `/runs/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub state: RunState,
    pub embeddings: EmbeddingState,
    #[serde(default)]
    pub candidate_ids: Vec<String>,
    #[serde(default)]
    pub new_candidates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Inner {
    wb: Workbench,
    config: ServiceConfig,
    pairs: HashMap<String, (Split, usize)>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    runs: RwLock<HashMap<String, RunStatus>>,
    dirty: AtomicBool,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(wb: Workbench, config: ServiceConfig) -> Self {
        let mut pairs = HashMap::new();
        for split in [Split::Train, Split::Valid, Split::Test] {
            for (i, p) in wb.corpus.split(split).iter().enumerate() {
                pairs.insert(p.pair_id.clone(), (split, i));
            }
        }
        Self(Arc::new(Inner {
            wb,
            config,
            pairs,
            sessions: RwLock::new(HashMap::new()),
            runs: RwLock::new(HashMap::new()),
            dirty: AtomicBool::new(false),
        }))
    }

    pub fn workbench(&self) -> &Workbench {
        &self.0.wb
    }

    fn pair(&self, pair_id: &str) -> Result<(Split, &LeveledPair), ApiError> {
        let &(split, i) = self.0.pairs.get(pair_id).ok_or_else(|| ApiError::not_found("pair", pair_id))?;
        Ok((split, &self.0.wb.corpus.split(split)[i]))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.0
            .sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    /// Runs `f` on one session with that session's lock held.
    fn with_session<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session, &Scorer) -> Result<T, ApiError>,
    ) -> Result<T, ApiError> {
        let s = self.session(id)?;
        let mut guard = s.lock().expect("session poisoned");
        let out = f(&mut guard, &self.0.wb.scorer)?;
        self.0.dirty.store(true, Ordering::Release);
        Ok(out)
    }

    fn set_run(&self, status: RunStatus) {
        self.0.runs.write().expect("run map poisoned").insert(status.run_id.clone(), status);
    }

    fn run_status(&self, run_id: &str) -> Option<RunStatus> {
        self.0.runs.read().expect("run map poisoned").get(run_id).cloned()
    }

    pub fn session_count(&self) -> usize {
        self.0.sessions.read().expect("session map poisoned").len()
    }

    /// Writes every session to `path` as JSONL, atomically.
    pub fn snapshot_sessions(&self, path: &Path) -> io::Result<usize> {
        let sessions: Vec<Arc<Mutex<Session>>> =
            self.0.sessions.read().expect("session map poisoned").values().cloned().collect();
        let mut rows: Vec<Session> = sessions.iter().map(|s| s.lock().expect("session poisoned").clone()).collect();
        rows.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut w = io::BufWriter::new(std::fs::File::create(&tmp)?);
            for s in &rows {
                serde_json::to_writer(&mut w, s)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(rows.len())
    }

    /// Loads sessions written by [`AppState::snapshot_sessions`]. A missing
    /// file loads nothing.
    pub fn restore_sessions(&self, path: &Path) -> io::Result<usize> {
        let file = match std::fs::File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(e),
        };
        let mut map = self.0.sessions.write().expect("session map poisoned");
        let mut n = 0;
        for line in io::BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: Session = serde_json::from_str(&line)?;
            map.insert(s.session_id.clone(), Arc::new(Mutex::new(s)));
            n += 1;
        }
        Ok(n)
    }

    /// Snapshots if anything changed since the last call.
    pub fn snapshot_if_dirty(&self) -> io::Result<Option<usize>> {
        let Some(path) = &self.0.config.snapshot_path else {
            return Ok(None);
        };
        if !self.0.dirty.swap(false, Ordering::AcqRel) {
            return Ok(None);
        }
        self.snapshot_sessions(path).map(Some).inspect_err(|_| {
            self.0.dirty.store(true, Ordering::Release);
        })
    }
}

pub fn router(state: AppState) -> Router {
    let origin = match &state.0.config.cors_origin {
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o).unwrap_or(HeaderValue::from_static("null"))),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new().allow_origin(origin).allow_methods(Any).allow_headers(Any);
    Router::new()
        .route("/health", get(health))
        .route("/score", post(score))
        .route("/pairs", get(list_pairs))
        .route("/pairs/{id}", get(get_pair))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/text", axum::routing::put(put_text))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/locks", post(set_locks))
        .route("/sessions/{id}/merge", post(merge))
        .route("/bank", get(bank))
        .route("/bank/{id}", get(bank_candidate))
        .route("/align", post(align))
        .route("/generate", post(generate))
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(run_status))
        .route("/runs/{id}/report", get(run_report))
        .route("/runs/{id}/scatter", get(run_scatter))
        .layer(cors)
        .with_state(state)
}

/// Serves on `listener` until the process ends, snapshotting sessions
/// periodically when a snapshot path is configured.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> io::Result<()> {
    if let Some(path) = state.0.config.snapshot_path.clone() {
        let n = state.restore_sessions(&path)?;
        tracing::info!(sessions = n, path = %path.display(), "restored sessions");
        let snap = state.clone();
        let every = state.0.config.snapshot_interval;
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            tick.tick().await;
            loop {
                tick.tick().await;
                let s = snap.clone();
                match tokio::task::spawn_blocking(move || s.snapshot_if_dirty()).await {
                    Ok(Ok(Some(n))) => tracing::debug!(sessions = n, "snapshot written"),
                    Ok(Ok(None)) => {}
                    Ok(Err(e)) => tracing::warn!(error = %e, "session snapshot failed"),
                    Err(e) => tracing::warn!(error = %e, "session snapshot task failed"),
                }
            }
        });
    }
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await
}

fn body<T>(r: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    r.map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request("malformed_body", e.body_text()))
}

fn query<T>(r: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    r.map(|Query(v)| v)
        .map_err(|e| ApiError::bad_request("malformed_query", e.body_text()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

#[derive(Debug, Deserialize)]
struct ScoreBody {
    text: String,
}

async fn score(
    State(st): State<AppState>,
    b: Result<Json<ScoreBody>, JsonRejection>,
) -> Result<Json<ReadabilityReport>, ApiError> {
    let b = body(b)?;
    st.0.wb
        .scorer
        .score(&b.text)
        .map(Json)
        .map_err(|e| ApiError::bad_request("unscorable", e.to_string()))
}

#[derive(Debug, Deserialize)]
struct PairsQuery {
    split: Split,
}

async fn list_pairs(
    State(st): State<AppState>,
    q: Result<Query<PairsQuery>, QueryRejection>,
) -> Result<Json<Vec<LeveledPair>>, ApiError> {
    let q = query(q)?;
    Ok(Json(st.0.wb.corpus.split(q.split).to_vec()))
}

async fn get_pair(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<LeveledPair>, ApiError> {
    Ok(Json(st.pair(&id)?.1.clone()))
}

#[derive(Debug, Deserialize)]
struct NewSession {
    pair_id: String,
}

async fn create_session(
    State(st): State<AppState>,
    b: Result<Json<NewSession>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let b = body(b)?;
    let (_, pair) = st.pair(&b.pair_id)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let s = Session::new(id.clone(), pair, &st.0.wb.scorer, st.0.config.history_limit);
    let view = s.view();
    st.0.sessions
        .write()
        .expect("session map poisoned")
        .insert(id, Arc::new(Mutex::new(s)));
    st.0.dirty.store(true, Ordering::Release);
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionView>, ApiError> {
    let s = st.session(&id)?;
    let view = s.lock().expect("session poisoned").view();
    Ok(Json(view))
}

#[derive(Debug, Deserialize)]
struct TextBody {
    text: String,
}

async fn put_text(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    b: Result<Json<TextBody>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let b = body(b)?;
    st.with_session(&id, |s, scorer| {
        s.set_text(b.text, scorer)?;
        Ok(Json(s.view()))
    })
}

async fn undo(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionView>, ApiError> {
    st.with_session(&id, |s, scorer| {
        s.undo(scorer)?;
        Ok(Json(s.view()))
    })
}

#[derive(Debug, Deserialize)]
struct LocksBody {
    spans: Vec<LockSpan>,
}

async fn set_locks(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    b: Result<Json<LocksBody>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let b = body(b)?;
    st.with_session(&id, |s, scorer| {
        s.set_locks(b.spans, scorer)?;
        Ok(Json(s.view()))
    })
}

#[derive(Debug, Deserialize)]
struct MergeBody {
    /// A bank candidate to merge from; alternatively `candidate_text`.
    #[serde(default)]
    candidate_id: Option<String>,
    #[serde(default)]
    candidate_text: Option<String>,
    replacements: Vec<Replacement>,
    /// Digest of the alignment the client chose links from. A mismatch
    /// means the working text changed underneath it.
    #[serde(default)]
    similarity_matrix_digest: Option<String>,
}

#[derive(Debug, Serialize)]
struct MergeResponse {
    session: SessionView,
    alignment: AlignmentMap,
}

async fn merge(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    b: Result<Json<MergeBody>, JsonRejection>,
) -> Result<Json<MergeResponse>, ApiError> {
    let b = body(b)?;
    let candidate = match (b.candidate_id, b.candidate_text) {
        (Some(cid), None) => st
            .0
            .wb
            .bank
            .get(&cid)
            .ok_or_else(|| ApiError::not_found("candidate", &cid))?
            .output_text,
        (None, Some(text)) => text,
        _ => {
            return Err(ApiError::bad_request(
                "malformed_body",
                "give exactly one of candidate_id and candidate_text",
            ))
        }
    };
    st.with_session(&id, |s, scorer| {
        if let Some(d) = &b.similarity_matrix_digest {
            let current = alignment::align_texts(&s.text, &candidate);
            if &current.similarity_matrix_digest != d {
                return Err(ApiError::conflict(
                    "stale_alignment",
                    "the working text changed since this alignment was computed",
                ));
            }
        }
        let map = s.merge(&candidate, &b.replacements, scorer)?;
        Ok(Json(MergeResponse {
            session: s.view(),
            alignment: map,
        }))
    })
}

async fn bank(
    State(st): State<AppState>,
    q: Result<Query<BankFilter>, QueryRejection>,
) -> Result<Json<Vec<Candidate>>, ApiError> {
    let filter = query(q)?;
    Ok(Json(harness::bank_query(&st.0.wb.bank, &filter)))
}

async fn bank_candidate(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Candidate>, ApiError> {
    st.0.wb
        .bank
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found("candidate", &id))
}

#[derive(Debug, Deserialize)]
struct AlignBody {
    base: String,
    candidate: String,
}

async fn align(b: Result<Json<AlignBody>, JsonRejection>) -> Result<Json<AlignmentMap>, ApiError> {
    let b = body(b)?;
    Ok(Json(alignment::align_texts(&b.base, &b.candidate)))
}

fn default_k() -> usize {
    1
}

#[derive(Debug, Deserialize)]
struct GenerateBody {
    pair_id: String,
    providers: Vec<String>,
    method: PromptMethod,
    #[serde(default = "default_k")]
    k: usize,
}

async fn generate(
    State(st): State<AppState>,
    b: Result<Json<GenerateBody>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let b = body(b)?;
    let (split, pair) = st.pair(&b.pair_id)?;
    if split == Split::Train {
        return Err(ApiError::bad_request(
            "train_pair",
            format!("{} is a training pair and serves only as an exemplar", b.pair_id),
        ));
    }
    if b.providers.is_empty() {
        return Err(ApiError::bad_request("invalid_request", "no providers named"));
    }
    let mut configs = Vec::new();
    for name in &b.providers {
        let cfg = st.0.wb.providers.iter().find(|p| &p.name == name).ok_or_else(|| {
            ApiError::bad_request("unknown_provider", format!("no provider named {name:?}"))
        })?;
        configs.push(cfg.clone());
    }
    let spec = RunSpec {
        run_id: format!("gen-{}", uuid::Uuid::new_v4().simple()),
        split,
        sample_size: 1,
        providers: configs,
        methods: vec![b.method],
        over_generation_k: b.k,
        seed: 0,
        window: DEFAULT_WINDOW,
    };
    spec.validate()?;
    let clients: Vec<Arc<dyn Provider>> = spec
        .providers
        .iter()
        .map(|c| providers::build_provider(c, st.0.wb.transport.clone()))
        .collect::<Result<_, _>>()
        .map_err(HarnessError::from)?;

    let status = RunStatus {
        run_id: spec.run_id.clone(),
        state: RunState::Running,
        embeddings: EmbeddingState::Pending,
        candidate_ids: Vec::new(),
        new_candidates: 0,
        error: None,
    };
    st.set_run(status.clone());
    let pair = pair.clone();
    let task = st.clone();
    tokio::task::spawn_blocking(move || run_generation(&task, &spec, &pair, &clients));
    Ok((StatusCode::ACCEPTED, Json(status)))
}

fn run_generation(st: &AppState, spec: &RunSpec, pair: &LeveledPair, clients: &[Arc<dyn Provider>]) {
    let wb = &st.0.wb;
    let env = BenchEnv {
        scorer: &wb.scorer,
        templates: &wb.templates,
        embedder: None,
        bank: &wb.bank,
    };
    let record = harness::run_on_pairs(spec, std::slice::from_ref(pair), &wb.corpus.train, clients, &env)
        .and_then(|r| wb.runs.save(&r).map(|_| r));
    let mut status = RunStatus {
        run_id: spec.run_id.clone(),
        state: RunState::Failed,
        embeddings: EmbeddingState::Skipped,
        candidate_ids: Vec::new(),
        new_candidates: 0,
        error: None,
    };
    let record = match record {
        Ok(r) => r,
        Err(e) => {
            tracing::warn!(run_id = %spec.run_id, error = %e, "generation failed");
            status.error = Some(e.to_string());
            st.set_run(status);
            return;
        }
    };
    status.state = RunState::Done;
    status.candidate_ids = candidate_ids(&record);
    status.new_candidates = record.new_candidates;
    let Some(embedder) = wb.embedder.clone() else {
        st.set_run(status);
        return;
    };
    status.embeddings = EmbeddingState::Pending;
    st.set_run(status.clone());

    for id in &status.candidate_ids {
        let Some(c) = wb.bank.get(id) else { continue };
        let (bert_like, semantic_similarity) = metrics::embedding_metrics(pair, &c.output_text, embedder.as_ref());
        let patch = MetricsPatch {
            candidate_id: id.clone(),
            bert_like,
            semantic_similarity,
        };
        if let Err(e) = wb.bank.patch_metrics(patch) {
            tracing::warn!(candidate_id = %id, error = %e, "metrics patch failed");
        }
    }
    status.embeddings = EmbeddingState::Done;
    st.set_run(status);
}

fn candidate_ids(record: &RunRecord) -> Vec<String> {
    record
        .series
        .iter()
        .flat_map(|s| s.requests.iter().flat_map(|r| r.candidate_ids.iter().cloned()))
        .collect()
}

async fn list_runs(State(st): State<AppState>) -> Result<Json<Vec<String>>, ApiError> {
    let store = st.0.wb.runs.clone();
    Ok(Json(blocking(move || store.list()).await??))
}

async fn load_run(st: &AppState, id: String) -> Result<RunRecord, ApiError> {
    if st.run_status(&id).is_some_and(|s| s.state == RunState::Running) {
        return Err(ApiError::conflict("run_pending", format!("run {id:?} is still running")));
    }
    let store = st.0.wb.runs.clone();
    Ok(blocking(move || store.load(&id)).await??)
}

async fn run_status(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<RunStatus>, ApiError> {
    if let Some(s) = st.run_status(&id) {
        return Ok(Json(s));
    }
    let record = load_run(&st, id).await?;
    Ok(Json(RunStatus {
        run_id: record.run_id.clone(),
        state: RunState::Done,
        embeddings: EmbeddingState::Skipped,
        candidate_ids: candidate_ids(&record),
        new_candidates: record.new_candidates,
        error: None,
    }))
}

async fn run_report(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<Vec<RunReport>>, ApiError> {
    Ok(Json(load_run(&st, id).await?.reports()))
}

async fn run_scatter(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, ApiError> {
    let record = load_run(&st, id).await?;
    let mut out = Vec::new();
    harness::write_scatter_csv(&harness::export_scatter(&record), &mut out).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], out))
}
