//! HTTP/JSON front end for a single [`Session`].
//!
//! All handlers lock the session and run on the blocking pool, so a long
//! analytics request never stalls the reactor. Mapping itself runs on the
//! session's own job thread; clients poll `/mapping/{job}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use themescope::analytics::GoldLabel;
use themescope::config::EmbedderConfig;
use themescope::index::HttpEmbedder;
use themescope::partition::RankOrder;
use themescope::session::{
    ExemplarRef, JobId, MappingRequest, PartitionMethod, ResultRef, Session, SessionError,
};
use themescope::store::IngestMode;
use themescope::themes::ExemplarSource;
use themescope::{Assignment, ConceptSchema, CorpusStore, Embedder, InstanceId, NeighborFilter, Polarity, SessionConfig, ThemeId};

/// Error body shared by every endpoint.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, code: code.into(), message: message.into(), detail: Value::Null }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let code = e.code();
        let status = match code {
            "phase_conflict" | "conflict" | "stale_job" | "job_running" => StatusCode::CONFLICT,
            "not_found" => StatusCode::NOT_FOUND,
            "embedder_unavailable" => StatusCode::SERVICE_UNAVAILABLE,
            "io_error" => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        let detail = match &e {
            SessionError::PhaseConflict { operation } => json!({ "operation": operation }),
            SessionError::StaleJob(job) | SessionError::JobRunning(job) | SessionError::UnknownJob(job) => {
                json!({ "job": job })
            }
            SessionError::Version { found, supported } => json!({ "found": found, "supported": supported }),
            _ => Value::Null,
        };
        Self { status, code: code.into(), message: e.to_string(), detail }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({ "code": self.code, "message": self.message, "detail": self.detail }));
        (self.status, body).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub struct AppState {
    pub session: RwLock<Session>,
    /// Required as `Authorization: Bearer <token>` when set.
    pub token: Option<String>,
    /// Used to rebuild the encoder client for imported sessions.
    pub embedder: EmbedderConfig,
    pub dim: Option<usize>,
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(session: Session) -> Shared {
        let embedder = session.config().embedder.clone();
        let dim = session.store().dim();
        Arc::new(Self { session: RwLock::new(session), token: None, embedder, dim })
    }
}

/// Runs `f` on the blocking pool.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn read<T: Send + 'static>(
    state: Shared,
    f: impl FnOnce(&Session) -> Result<T, SessionError> + Send + 'static,
) -> impl std::future::Future<Output = ApiResult<T>> {
    async move { blocking(move || Ok(f(&state.session.read())?)).await.map(Json) }
}

fn write<T: Send + 'static>(
    state: Shared,
    f: impl FnOnce(&mut Session) -> Result<T, SessionError> + Send + 'static,
) -> impl std::future::Future<Output = ApiResult<T>> {
    async move { blocking(move || Ok(f(&mut state.session.write())?)).await.map(Json) }
}

async fn require_token(State(state): State<Shared>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let given = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(request).await
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/state", get(session_state))
        .route("/stats", get(stats))
        .route("/instances/{id}", get(instance))
        .route("/instances/{id}/concepts", put(upsert_concepts))
        .route("/instances/{id}/assignment", put(set_assignment))
        .route("/instances/{id}/neighbors", get(neighbors))
        .route("/query", post(query_text))
        .route("/partitions", get(partitions).post(repartition))
        .route("/partitions/{id}/members", get(partition_members))
        .route("/themes", get(themes).post(create_theme))
        .route("/themes/{id}", get(theme).patch(rename_theme).delete(delete_theme))
        .route("/themes/{id}/members", get(theme_members))
        .route("/themes/{id}/exemplars", post(add_exemplar))
        .route("/themes/{id}/exemplars/remove", post(remove_exemplar))
        .route("/themes/{id}/exemplars/concepts", put(set_exemplar_concepts))
        .route("/themes/{id}/phrases", post(add_phrase))
        .route("/themes/{id}/explanation", get(explanation))
        .route("/mapping", post(start_mapping))
        .route("/mapping/{job}", get(job_status))
        .route("/mapping/{job}/result", get(job_result))
        .route("/mapping/{job}/commit", post(commit))
        .route("/analytics/metrics", post(metrics))
        .route("/analytics/shift", post(shift))
        .route("/analytics/overlap", post(overlap))
        .route("/analytics/quartiles", post(quartiles))
        .route("/analytics/evaluation", post(evaluation))
        .route("/analytics/evaluation/sample", post(evaluation_sample))
        .route("/analytics/global", get(global))
        .route("/export", post(export))
        .route("/import", post(import))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

// ----- corpus -------------------------------------------------------------

async fn session_state(State(s): State<Shared>) -> impl IntoResponse {
    read(s, |s| Ok(s.state())).await
}

async fn stats(State(s): State<Shared>) -> impl IntoResponse {
    read(s, |s| Ok(s.stats())).await
}

async fn instance(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> impl IntoResponse {
    read(s, move |s| s.instance(&id).cloned()).await
}

async fn upsert_concepts(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Json(edits): Json<BTreeMap<String, String>>,
) -> impl IntoResponse {
    write(s, move |s| s.upsert_concepts(&id, edits)).await
}

async fn set_assignment(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Json(assignment): Json<Assignment>,
) -> impl IntoResponse {
    write(s, move |s| s.set_assignment(&id, assignment)).await
}

#[derive(Deserialize)]
struct NeighborQuery {
    #[serde(default = "default_k")]
    k: usize,
    /// `all`, `unassigned` or a theme id.
    #[serde(default)]
    filter: Option<String>,
}

fn default_k() -> usize {
    10
}

fn parse_filter(filter: Option<&str>) -> Result<NeighborFilter, SessionError> {
    match filter {
        None | Some("all") => Ok(NeighborFilter::All),
        Some("unassigned") => Ok(NeighborFilter::Unassigned),
        Some(t) => t
            .parse()
            .map(|t| NeighborFilter::Theme(ThemeId(t)))
            .map_err(|_| SessionError::Invalid(format!("unknown neighbor filter `{t}`"))),
    }
}

async fn neighbors(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<NeighborQuery>,
) -> impl IntoResponse {
    read(s, move |s| s.neighbors_of(&id, q.k, parse_filter(q.filter.as_deref())?)).await
}

#[derive(Deserialize)]
struct TextQuery {
    text: String,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default)]
    filter: Option<String>,
}

async fn query_text(State(s): State<Shared>, Json(q): Json<TextQuery>) -> impl IntoResponse {
    read(s, move |s| s.query_text(&q.text, q.k, parse_filter(q.filter.as_deref())?)).await
}

// ----- partitions ---------------------------------------------------------

async fn partitions(State(s): State<Shared>) -> impl IntoResponse {
    read(s, |s| Ok(s.partitions().to_vec())).await
}

async fn repartition(State(s): State<Shared>, body: Option<Json<PartitionMethod>>) -> impl IntoResponse {
    let method = body.map(|Json(m)| m);
    write(s, move |s| Ok(s.repartition(method)?.to_vec())).await
}

#[derive(Deserialize)]
struct OrderQuery {
    #[serde(default)]
    order: Option<RankOrder>,
}

async fn partition_members(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<usize>,
    Query(q): Query<OrderQuery>,
) -> impl IntoResponse {
    read(s, move |s| s.ranked_members(id, q.order.unwrap_or(RankOrder::ClosestFirst))).await
}

// ----- themes -------------------------------------------------------------

#[derive(Deserialize)]
struct NameBody {
    name: String,
}

async fn themes(State(s): State<Shared>) -> impl IntoResponse {
    read(s, |s| Ok(s.themes().themes().cloned().collect::<Vec<_>>())).await
}

async fn create_theme(State(s): State<Shared>, Json(b): Json<NameBody>) -> Result<Response, ApiError> {
    let theme = write(s, move |s| s.create_theme(&b.name)).await?;
    Ok((StatusCode::CREATED, theme).into_response())
}

async fn theme(State(s): State<Shared>, UrlPath(id): UrlPath<u64>) -> impl IntoResponse {
    read(s, move |s| s.theme(ThemeId(id)).cloned()).await
}

async fn rename_theme(State(s): State<Shared>, UrlPath(id): UrlPath<u64>, Json(b): Json<NameBody>) -> impl IntoResponse {
    write(s, move |s| s.rename_theme(ThemeId(id), &b.name)).await
}

async fn delete_theme(State(s): State<Shared>, UrlPath(id): UrlPath<u64>) -> impl IntoResponse {
    write(s, move |s| Ok(json!({ "released": s.delete_theme(ThemeId(id))? }))).await
}

async fn theme_members(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    Query(q): Query<OrderQuery>,
) -> impl IntoResponse {
    read(s, move |s| s.ranked_theme_members(ThemeId(id), q.order.unwrap_or(RankOrder::ClosestFirst))).await
}

#[derive(Deserialize)]
struct ExemplarBody {
    polarity: Polarity,
    source: ExemplarRef,
}

async fn add_exemplar(State(s): State<Shared>, UrlPath(id): UrlPath<u64>, Json(b): Json<ExemplarBody>) -> impl IntoResponse {
    write(s, move |s| s.add_exemplar(ThemeId(id), b.polarity, b.source)).await
}

async fn remove_exemplar(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    Json(source): Json<ExemplarSource>,
) -> impl IntoResponse {
    write(s, move |s| s.remove_exemplar(ThemeId(id), source)).await
}

#[derive(Deserialize)]
struct ExemplarConceptsBody {
    source: ExemplarSource,
    concepts: BTreeMap<String, String>,
}

async fn set_exemplar_concepts(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    Json(b): Json<ExemplarConceptsBody>,
) -> impl IntoResponse {
    write(s, move |s| s.set_exemplar_concepts(ThemeId(id), b.source, b.concepts)).await
}

#[derive(Deserialize)]
struct PhraseBody {
    text: String,
    #[serde(default)]
    embedding: Option<Vec<f32>>,
}

async fn add_phrase(State(s): State<Shared>, UrlPath(id): UrlPath<u64>, Json(b): Json<PhraseBody>) -> impl IntoResponse {
    write(s, move |s| s.add_phrase(ThemeId(id), &b.text, b.embedding)).await
}

#[derive(Deserialize)]
struct ExplanationQuery {
    #[serde(default = "default_tokens")]
    max_tokens: usize,
    #[serde(default = "default_digest")]
    digest: usize,
}

fn default_tokens() -> usize {
    30
}

fn default_digest() -> usize {
    5
}

async fn explanation(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    Query(q): Query<ExplanationQuery>,
) -> impl IntoResponse {
    read(s, move |s| s.local_explanation(ThemeId(id), q.max_tokens, q.digest)).await
}

// ----- mapping ------------------------------------------------------------

async fn start_mapping(State(s): State<Shared>, body: Option<Json<MappingRequest>>) -> Result<Response, ApiError> {
    let request = body.map(|Json(r)| r).unwrap_or_default();
    let status = write(s, move |s| {
        let id = s.start_mapping(request)?;
        s.job_status(id)
    })
    .await?;
    Ok((StatusCode::ACCEPTED, status).into_response())
}

async fn job_status(State(s): State<Shared>, UrlPath(job): UrlPath<JobId>) -> impl IntoResponse {
    write(s, move |s| s.job_status(job)).await
}

async fn job_result(State(s): State<Shared>, UrlPath(job): UrlPath<JobId>) -> impl IntoResponse {
    write(s, move |s| s.job_result(job).cloned()).await
}

async fn commit(State(s): State<Shared>, UrlPath(job): UrlPath<JobId>) -> impl IntoResponse {
    write(s, move |s| s.commit(job)).await
}

// ----- analytics ----------------------------------------------------------

#[derive(Deserialize, Default)]
struct ResultBody {
    #[serde(default)]
    result: ResultRef,
}

async fn metrics(State(s): State<Shared>, body: Option<Json<ResultBody>>) -> impl IntoResponse {
    let which = body.map(|Json(b)| b.result).unwrap_or_default();
    write(s, move |s| s.metrics(which)).await
}

#[derive(Deserialize)]
struct ShiftBody {
    prev: ResultRef,
    next: ResultRef,
}

async fn shift(State(s): State<Shared>, Json(b): Json<ShiftBody>) -> impl IntoResponse {
    write(s, move |s| s.shift(b.prev, b.next)).await
}

#[derive(Deserialize)]
struct OverlapBody {
    a: ResultRef,
    #[serde(default)]
    b: Option<ResultRef>,
    /// External clusters to compare against instead of `b`.
    #[serde(default)]
    clusters: Option<BTreeMap<String, BTreeSet<InstanceId>>>,
}

async fn overlap(State(s): State<Shared>, Json(body): Json<OverlapBody>) -> impl IntoResponse {
    write(s, move |s| match (body.b, body.clusters) {
        (_, Some(clusters)) => s.overlap_with(body.a, &clusters),
        (Some(b), None) => s.overlap(body.a, b),
        (None, None) => Err(SessionError::Invalid("overlap needs `b` or `clusters`".into())),
    })
    .await
}

async fn quartiles(State(s): State<Shared>, body: Option<Json<ResultBody>>) -> impl IntoResponse {
    let which = body.map(|Json(b)| b.result).unwrap_or_default();
    write(s, move |s| s.quartiles(which)).await
}

#[derive(Deserialize)]
struct EvaluationBody {
    #[serde(default)]
    result: ResultRef,
    gold: BTreeMap<InstanceId, GoldLabel>,
}

async fn evaluation(State(s): State<Shared>, Json(b): Json<EvaluationBody>) -> impl IntoResponse {
    write(s, move |s| s.evaluation(b.result, &b.gold)).await
}

#[derive(Deserialize)]
struct SampleBody {
    #[serde(default)]
    result: ResultRef,
    n: usize,
    #[serde(default)]
    seed: u64,
}

async fn evaluation_sample(State(s): State<Shared>, Json(b): Json<SampleBody>) -> impl IntoResponse {
    write(s, move |s| s.evaluation_sample(b.result, b.n, b.seed)).await
}

#[derive(Deserialize)]
struct GlobalQuery {
    #[serde(default)]
    sample: Option<usize>,
}

async fn global(State(s): State<Shared>, Query(q): Query<GlobalQuery>) -> impl IntoResponse {
    read(s, move |s| Ok(s.global_state(q.sample))).await
}

// ----- export / import ----------------------------------------------------

#[derive(Deserialize, Serialize)]
struct PathBody {
    path: PathBuf,
}

async fn export(State(s): State<Shared>, Json(b): Json<PathBody>) -> impl IntoResponse {
    read(s, move |s| {
        s.export(&b.path)?;
        Ok(b)
    })
    .await
}

async fn import(State(state): State<Shared>, Json(b): Json<PathBody>) -> ApiResult<Value> {
    blocking(move || {
        let embedder = make_embedder(&state.embedder, state.dim)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()))?;
        let mut session = state.session.write();
        if session.running_job().is_some() {
            return Err(SessionError::PhaseConflict { operation: "import".into() }.into());
        }
        *session = Session::import(&b.path, embedder)?;
        Ok(serde_json::to_value(session.state()).expect("state serializes"))
    })
    .await
    .map(Json)
}

// ----- startup ------------------------------------------------------------

/// Encoder client for the configured endpoint, if any. The vector size falls
/// back to the corpus dimension when the config leaves it out.
pub fn make_embedder(config: &EmbedderConfig, corpus_dim: Option<usize>) -> anyhow::Result<Option<Box<dyn Embedder>>> {
    let Some(endpoint) = &config.endpoint else { return Ok(None) };
    let dim = config
        .dim
        .or(corpus_dim)
        .context("embedder.dim is required when the corpus carries no embeddings")?;
    let client = HttpEmbedder::new(endpoint, &config.model, dim, Duration::from_millis(config.timeout_ms))?;
    Ok(Some(Box::new(client)))
}

pub fn load_config(path: Option<&Path>) -> anyhow::Result<SessionConfig> {
    let Some(path) = path else { return Ok(SessionConfig::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config: SessionConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    config.validate()?;
    Ok(config)
}

/// Ingests the corpus and starts (or reopens) the session.
pub fn load_session(
    corpus: &Path,
    schema: &Path,
    config: SessionConfig,
    session_dir: Option<&Path>,
) -> anyhow::Result<Session> {
    let schema: ConceptSchema = serde_json::from_reader(BufReader::new(
        File::open(schema).with_context(|| format!("opening schema {}", schema.display()))?,
    ))
    .context("parsing schema")?;
    let mut store = CorpusStore::new(schema)?;
    if let Some(dim) = config.embedder.dim {
        store = store.with_dim(dim);
    }
    let reader = BufReader::new(File::open(corpus).with_context(|| format!("opening corpus {}", corpus.display()))?);
    store.ingest(reader, IngestMode::Strict).context("ingesting corpus")?;
    let embedder = make_embedder(&config.embedder, store.dim())?;
    if let Some(dir) = session_dir {
        if dir.join("snapshot.json").exists() {
            return Ok(Session::open(dir, embedder)?);
        }
        return Ok(Session::create(dir, config, store, embedder)?);
    }
    Ok(Session::new(config, store, embedder)?)
}
