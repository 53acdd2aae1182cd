//! Local HTTP service behind the operator workbench.
//!
//! Requests name their session with the `x-session-id` header. In the default
//! single-session mode the header may be omitted and loading a page replaces
//! the previous one. Job ids are unique across sessions, so job, result and
//! score URLs work without the header (an `<img src>` cannot set one).

mod error;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use palimpsest_core::cube_io::{rasterize_labels, BandDescriptor, LabelPolygonSet};
use palimpsest_core::eval::{fisher_score, ReportEntry, SeparabilityReport};
use palimpsest_core::pipeline::{plan, EnhanceSpec, Method, PageInputs};
use palimpsest_core::render::{downsample, encode_planes, stretch, write_atomic, DEFAULT_STRETCH};
use palimpsest_core::threshold::{apply_double_threshold, suggest_thresholds, ThresholdParams};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use error::{status_for, ApiError, ApiResult, ErrorBody};
pub use session::{Job, JobStatus, Session};

pub const DEFAULT_PORT: u16 = 8077;
pub const DEFAULT_PREVIEW_PX: usize = 1_000_000;
/// Previews slower than this are logged.
pub const PREVIEW_BUDGET: Duration = Duration::from_millis(250);
pub const SESSION_HEADER: &str = "x-session-id";

#[derive(Debug, Clone, Default)]
pub struct ServiceOptions {
    pub multi_session: bool,
    /// When set, finished results are also written here under their pipeline file names.
    pub out_dir: Option<PathBuf>,
}

#[derive(Default)]
struct Sessions {
    by_id: HashMap<String, Arc<Session>>,
    latest: Option<String>,
}

pub struct AppState {
    opts: ServiceOptions,
    sessions: Mutex<Sessions>,
    next_session: AtomicU64,
    next_job: AtomicU64,
}

impl AppState {
    pub fn new(opts: ServiceOptions) -> Self {
        AppState {
            opts,
            sessions: Mutex::new(Sessions::default()),
            next_session: AtomicU64::new(1),
            next_job: AtomicU64::new(1),
        }
    }

    fn session(&self, headers: &HeaderMap) -> ApiResult<Arc<Session>> {
        let sessions = self.sessions.lock().expect("state lock");
        match headers.get(SESSION_HEADER).and_then(|v| v.to_str().ok()) {
            Some(id) => sessions.by_id.get(id).cloned().ok_or_else(|| ApiError::not_found(format!("no session {id}"))),
            None if self.opts.multi_session && sessions.by_id.len() > 1 => {
                Err(ApiError::bad_request(format!("several sessions are open; send the {SESSION_HEADER} header")))
            }
            None => sessions
                .latest
                .as_ref()
                .and_then(|id| sessions.by_id.get(id).cloned())
                .ok_or_else(|| ApiError::conflict("no_session", "no page loaded; POST /api/session first")),
        }
    }

    fn job_session(&self, job_id: &str) -> ApiResult<(Arc<Session>, Job)> {
        let sessions: Vec<Arc<Session>> =
            self.sessions.lock().expect("state lock").by_id.values().cloned().collect();
        sessions
            .into_iter()
            .find_map(|s| s.job(job_id).map(|j| (s, j)))
            .ok_or_else(|| ApiError::not_found(format!("no job {job_id}")))
    }
}

/// All routes, with CORS for local origins.
pub fn router(opts: ServiceOptions) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|origin: &HeaderValue, _| {
            let o = origin.as_bytes();
            ["http://localhost", "http://127.0.0.1", "http://[::1]"].iter().any(|p| {
                o.starts_with(p.as_bytes()) && matches!(o.get(p.len()), None | Some(b':'))
            })
        }))
        .allow_methods(Any)
        .allow_headers(Any);
    Router::new()
        .route("/api/session", post(create_session).get(session_info))
        .route("/api/band/{index}/preview", get(band_preview))
        .route("/api/labels", put(put_labels))
        .route("/api/enhance", post(enhance))
        .route("/api/job/{id}", get(job_status))
        .route("/api/result/{file}", get(result_png))
        .route("/api/threshold", post(threshold_preview))
        .route("/api/score", get(score))
        .route("/api/suggest_thresholds", get(suggest))
        .layer(cors)
        .with_state(Arc::new(AppState::new(opts)))
}

pub async fn serve(addr: SocketAddr, opts: ServiceOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(opts)).await
}

type Shared = State<Arc<AppState>>;

fn png_response(bytes: Vec<u8>) -> Response {
    ([(CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn json_body<T>(body: Result<Json<T>, axum::extract::rejection::JsonRejection>) -> ApiResult<T> {
    body.map(|Json(v)| v).map_err(|e| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", e.body_text()).with_status(e.status())
    })
}

#[derive(Debug, Deserialize)]
struct SessionRequest {
    manifest_path: PathBuf,
}

#[derive(Debug, Serialize)]
struct SessionInfo {
    session_id: String,
    page: String,
    width: usize,
    height: usize,
    bands: Vec<BandDescriptor>,
    labels: bool,
    cached_models: usize,
    cache_hits: u64,
}

fn info(session: &Session) -> SessionInfo {
    let inputs = session.inputs();
    SessionInfo {
        session_id: session.id.clone(),
        page: inputs.page.clone(),
        width: inputs.cube.width(),
        height: inputs.cube.height(),
        bands: inputs.cube.bands().to_vec(),
        labels: inputs.mask.is_some(),
        cached_models: session.cached_models(),
        cache_hits: session.cache_hits(),
    }
}

async fn create_session(
    State(state): Shared,
    body: Result<Json<SessionRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<SessionInfo>> {
    let req = json_body(body).map_err(|e| e.with_status(StatusCode::BAD_REQUEST))?;
    let inputs = blocking(move || {
        PageInputs::load(&req.manifest_path, None, None)
            .map_err(|e| ApiError::from(e).with_status(StatusCode::BAD_REQUEST))
    })
    .await?;
    let id = format!("s{}", state.next_session.fetch_add(1, Ordering::Relaxed));
    let session = Arc::new(Session::new(id.clone(), inputs));
    let mut sessions = state.sessions.lock().expect("state lock");
    if !state.opts.multi_session {
        sessions.by_id.clear();
    }
    sessions.by_id.insert(id.clone(), session.clone());
    sessions.latest = Some(id);
    Ok(Json(info(&session)))
}

async fn session_info(State(state): Shared, headers: HeaderMap) -> ApiResult<Json<SessionInfo>> {
    let session = state.session(&headers)?;
    Ok(Json(info(&session)))
}

#[derive(Debug, Deserialize)]
struct PreviewQuery {
    max_px: Option<usize>,
}

/// The `[0,1]` plane a threshold acts on, at full resolution: a band
/// stretched like its preview, or the first channel of a rendered result.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum SourceRef {
    Band(usize),
    Result(String),
}

impl SourceRef {
    fn parse(s: &str) -> SourceRef {
        s.parse().map(SourceRef::Band).unwrap_or_else(|_| SourceRef::Result(s.to_string()))
    }
}

fn source_plane(state: &AppState, session: &Session, source: &SourceRef) -> ApiResult<(Vec<f64>, usize, usize)> {
    match source {
        SourceRef::Band(b) => {
            let inputs = session.inputs();
            let plane = inputs.cube.band_plane(*b).map_err(|e| ApiError::from(e).with_status(StatusCode::NOT_FOUND))?;
            let stretched = stretch(&plane, DEFAULT_STRETCH[0], DEFAULT_STRETCH[1])?;
            Ok((stretched, inputs.cube.width(), inputs.cube.height()))
        }
        SourceRef::Result(id) => {
            let (_, job) = state.job_session(id)?;
            let outcome = job.outcome.ok_or_else(|| ApiError::not_found(format!("job {id} has no result yet")))?;
            Ok((outcome.image.channels[0].clone(), outcome.image.width, outcome.image.height))
        }
    }
}

async fn band_preview(
    State(state): Shared,
    headers: HeaderMap,
    Path(index): Path<usize>,
    Query(q): Query<PreviewQuery>,
) -> ApiResult<Response> {
    let session = state.session(&headers)?;
    let max_px = q.max_px.unwrap_or(DEFAULT_PREVIEW_PX);
    let bytes = blocking(move || {
        let (plane, w, h) = source_plane(&state, &session, &SourceRef::Band(index))?;
        let (small, w2, h2) = downsample(&plane, w, h, max_px);
        Ok(encode_planes(&[small], w2, h2, 8, None)?)
    })
    .await?;
    Ok(png_response(bytes))
}

async fn put_labels(
    State(state): Shared,
    headers: HeaderMap,
    body: Result<Json<LabelPolygonSet>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<Value>> {
    let polygons = json_body(body)?;
    let session = state.session(&headers)?;
    let counts = blocking(move || {
        polygons.validate()?;
        let mut inputs = (*session.inputs()).clone();
        let mask = rasterize_labels(&polygons, inputs.cube.width(), inputs.cube.height())?;
        let counts = mask.counts();
        inputs.set_mask(Some(mask))?;
        session.replace_inputs(inputs);
        Ok(counts)
    })
    .await?;
    Ok(Json(json!({ "counts": counts })))
}

async fn enhance(
    State(state): Shared,
    headers: HeaderMap,
    body: Result<Json<EnhanceSpec>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let spec = json_body(body)?;
    let session = state.session(&headers)?;
    spec.validate()?;
    if spec.method == Method::Threshold {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "config", "use /api/threshold for thresholding"));
    }
    let inputs = session.inputs();
    if spec.method.is_supervised() && inputs.mask.is_none() {
        return Err(ApiError::conflict(
            "labels_required",
            format!("{} is supervised; PUT /api/labels first", spec.method),
        ));
    }
    let plan = plan(&inputs, &spec)?;
    let job_id = format!("j{}", state.next_job.fetch_add(1, Ordering::Relaxed));
    session.insert_job(
        job_id.clone(),
        Job { status: JobStatus::Queued, spec: spec.clone(), plan: plan.clone(), cache_hit: false, outcome: None, error: None },
    );
    let out_dir = state.opts.out_dir.clone();
    let id = job_id.clone();
    tokio::spawn(async move {
        let _turn = session.fit_queue.lock().await;
        session.update_job(&id, |j| j.status = JobStatus::Running);
        let worker = session.clone();
        let result = tokio::task::spawn_blocking(move || {
            let (outcome, hit) = worker.execute(&inputs, &spec, &plan)?;
            if let Some(dir) = out_dir {
                write_atomic(dir.join(&outcome.plan.file_name), &outcome.png)?;
            }
            Ok::<_, palimpsest_core::Error>((outcome, hit))
        })
        .await;
        session.update_job(&id, |j| match result {
            Ok(Ok((outcome, hit))) => {
                j.status = JobStatus::Done;
                j.cache_hit = hit;
                j.outcome = Some(Arc::new(outcome));
            }
            Ok(Err(e)) => {
                j.status = JobStatus::Failed;
                j.error = Some(ApiError::from(e).body);
            }
            Err(e) => {
                j.status = JobStatus::Failed;
                j.error = Some(ErrorBody { code: "internal".into(), message: e.to_string(), detail: Value::Null });
            }
        });
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))))
}

async fn job_status(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let (session, job) = state.job_session(&id)?;
    let mut body = json!({
        "job_id": id,
        "session_id": session.id,
        "status": job.status,
        "method": job.spec.method,
        "params_hash": job.plan.params_hash,
        "file_name": job.plan.file_name,
    });
    if let Some(outcome) = &job.outcome {
        body["result"] = json!(format!("/api/result/{id}.png"));
        body["cache_hit"] = json!(job.cache_hit);
        body["entry"] = json!(outcome.entry);
    }
    if let Some(err) = &job.error {
        body["error"] = json!(err);
    }
    Ok(Json(body))
}

async fn result_png(State(state): Shared, Path(file): Path<String>) -> ApiResult<Response> {
    let id = file.strip_suffix(".png").unwrap_or(&file);
    let (_, job) = state.job_session(id)?;
    match job.outcome {
        Some(outcome) => Ok(png_response(outcome.png.clone())),
        None => Err(ApiError::not_found(format!("job {id} is {:?}", job.status).to_lowercase())),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdRequest {
    source: SourceRef,
    t1: f64,
    t2: f64,
    #[serde(default = "half")]
    alpha: f64,
    max_px: Option<usize>,
}

fn half() -> f64 {
    0.5
}

async fn threshold_preview(
    State(state): Shared,
    headers: HeaderMap,
    body: Result<Json<ThresholdRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Response> {
    let req = json_body(body)?;
    let params = ThresholdParams::new(req.t1, req.t2, req.alpha)?;
    let session = state.session(&headers)?;
    let started = Instant::now();
    let (bytes, px) = blocking(move || {
        let (plane, w, h) = source_plane(&state, &session, &req.source)?;
        let (small, w2, h2) = downsample(&plane, w, h, req.max_px.unwrap_or(DEFAULT_PREVIEW_PX));
        let out = apply_double_threshold(&small, params)?;
        Ok((encode_planes(&[out], w2, h2, 8, None)?, w2 * h2))
    })
    .await?;
    let elapsed = started.elapsed();
    if elapsed > PREVIEW_BUDGET {
        tracing::warn!(?elapsed, px, "threshold preview over budget");
    } else {
        tracing::debug!(?elapsed, px, "threshold preview");
    }
    Ok(png_response(bytes))
}

#[derive(Debug, Deserialize)]
struct ScoreQuery {
    result: String,
    classes: Option<String>,
}

fn parse_classes(s: Option<&str>) -> ApiResult<[u8; 2]> {
    let Some(s) = s else { return Ok([1, 2]) };
    let v: Vec<u8> = s
        .split(',')
        .map(|c| c.trim().parse::<u8>())
        .collect::<Result<_, _>>()
        .map_err(|_| ApiError::bad_request(format!("classes must be two integers, got {s:?}")))?;
    match v.as_slice() {
        [a, b] if a != b => Ok([*a, *b]),
        _ => Err(ApiError::bad_request(format!("classes must be two distinct integers, got {s:?}"))),
    }
}

async fn score(State(state): Shared, Query(q): Query<ScoreQuery>) -> ApiResult<Json<SeparabilityReport>> {
    let classes = parse_classes(q.classes.as_deref())?;
    let (session, job) = state.job_session(&q.result)?;
    let outcome = job.outcome.ok_or_else(|| ApiError::not_found(format!("job {} has no result yet", q.result)))?;
    let inputs = session.inputs();
    let mask = inputs.mask.as_ref().ok_or_else(|| ApiError::conflict("labels_required", "no labels uploaded"))?;
    let report = blocking({
        let mask = mask.clone();
        let page = inputs.page.clone();
        move || {
            let e = &outcome.embedding;
            let channels: Vec<Vec<f64>> = (0..e.dims()).map(|c| e.column(c)).collect();
            let r = fisher_score(&channels, mask.labels(), (classes[0], classes[1]))?;
            let entry = ReportEntry {
                method: outcome.entry.method.clone(),
                score: Some(r.best),
                channel: Some(r.best_channel),
                params_hash: outcome.plan.params_hash.clone(),
                counts: Some(r.counts),
                image: Some(outcome.plan.file_name.clone()),
                error: None,
            };
            Ok(SeparabilityReport::new(page, classes, vec![entry]))
        }
    })
    .await?;
    Ok(Json(report))
}

#[derive(Debug, Deserialize)]
struct SuggestQuery {
    source: String,
}

async fn suggest(
    State(state): Shared,
    headers: HeaderMap,
    Query(q): Query<SuggestQuery>,
) -> ApiResult<Json<ThresholdParams>> {
    let session = state.session(&headers)?;
    let mask = session.inputs().mask.clone().ok_or_else(|| ApiError::conflict("labels_required", "no labels uploaded"))?;
    let source = SourceRef::parse(&q.source);
    let params = blocking(move || {
        let (plane, _, _) = source_plane(&state, &session, &source)?;
        Ok(suggest_thresholds(&plane, mask.labels())?)
    })
    .await?;
    Ok(Json(params))
}
