use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use draftcheck_core::analytics::{
    category_distribution, compute_funnel, interaction_histogram, task_distribution, AnalyticsError,
};
use draftcheck_core::feedback::validate_draft_text;
use draftcheck_core::{
    DraftError, EventStore, FeedbackGateway, FeedbackTable, GatewayError, InteractionKind, InteractionRecord,
    NewRecord, PromptVersion, ProviderKind, RecordId, ReportDraft, StoreError,
};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

use crate::config::{RoundConfig, ServiceConfig};
use crate::ServeError;

const MAX_STUDENT_ID_LEN: usize = 128;

type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

/// One lock per (round, student): at most one feedback request in flight.
type InFlight = Mutex<HashMap<(String, String), Arc<tokio::sync::Mutex<()>>>>;

struct Round {
    config: RoundConfig,
    gateway: FeedbackGateway,
}

/// Shared service state. Cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store: Arc<dyn EventStore>,
    rounds: BTreeMap<String, Round>,
    dev_mode: bool,
    student_header: String,
    in_flight: InFlight,
    clock: Clock,
}

impl AppState {
    pub fn new(config: &ServiceConfig, store: Arc<dyn EventStore>) -> Result<Self, ServeError> {
        let mut rounds = BTreeMap::new();
        for rc in &config.rounds {
            let gateway = FeedbackGateway::from_config(rc.provider.clone()).map_err(|source| ServeError::Provider {
                round: rc.id.clone(),
                source,
            })?;
            rounds.insert(rc.id.clone(), Round { config: rc.clone(), gateway });
        }
        Ok(AppState {
            inner: Arc::new(Inner {
                store,
                rounds,
                dev_mode: config.dev_mode,
                student_header: config.student_header.to_ascii_lowercase(),
                in_flight: Mutex::new(HashMap::new()),
                clock: Arc::new(Utc::now),
            }),
        })
    }

    /// Replaces a round's gateway, e.g. with a stubbed provider.
    pub fn with_gateway(mut self, round_id: &str, gateway: FeedbackGateway) -> Self {
        let inner = Arc::get_mut(&mut self.inner).expect("state not shared yet");
        if let Some(round) = inner.rounds.get_mut(round_id) {
            round.gateway = gateway;
        }
        self
    }

    /// Overrides the wall clock used for timestamps and round windows.
    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        Arc::get_mut(&mut self.inner).expect("state not shared yet").clock = Arc::new(clock);
        self
    }

    pub fn store(&self) -> &Arc<dyn EventStore> {
        &self.inner.store
    }

    fn student_lock(&self, round: &str, student: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut map = self.inner.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        map.entry((round.to_string(), student.to_string())).or_default().clone()
    }
}

pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/rounds", get(list_rounds))
        .route("/api/rounds/:round/students/:student/feedback", post(feedback))
        .route("/api/rounds/:round/students/:student/submit", post(submit))
        .route("/api/rounds/:round/students/:student/history", get(history))
        .route("/api/rounds/:round/analytics/funnel", get(funnel))
        .route("/api/rounds/:round/analytics/histogram", get(histogram))
        .route("/api/rounds/:round/analytics/tasks", get(tasks))
        .route("/api/rounds/:round/analytics/categories", get(categories))
        .with_state(state);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(TraceLayer::new_for_http())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn unknown_round(round: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_round", format!("no round `{round}`"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<DraftError> for ApiError {
    fn from(e: DraftError) -> Self {
        let code = match e {
            DraftError::EmptyDraft => "empty_draft",
            DraftError::DraftTooLong(_) => "draft_too_long",
        };
        ApiError::new(StatusCode::BAD_REQUEST, code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        tracing::error!(error = %e, "store failure");
        match e {
            StoreError::StorageFull { .. } => ApiError::new(StatusCode::INSUFFICIENT_STORAGE, "storage_full", e.to_string()),
            StoreError::InvalidRecord(_) => ApiError::new(StatusCode::BAD_REQUEST, "invalid_record", e.to_string()),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", e.to_string()),
        }
    }
}

impl From<AnalyticsError> for ApiError {
    fn from(e: AnalyticsError) -> Self {
        let code = match e {
            AnalyticsError::NormalizationImpossible(_) => "normalization_impossible",
            AnalyticsError::VersionUnsupported { .. } => "version_unsupported",
        };
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, StoreError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

fn round<'a>(state: &'a AppState, id: &str) -> ApiResult<&'a Round> {
    state.inner.rounds.get(id).ok_or_else(|| ApiError::unknown_round(id))
}

/// Outside dev mode the proxy-supplied header must name the same student as the URL.
fn authorize(state: &AppState, headers: &HeaderMap, student: &str) -> ApiResult<()> {
    if student.trim().is_empty() || student.len() > MAX_STUDENT_ID_LEN || student.chars().any(char::is_control) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_student", "malformed student id"));
    }
    if state.inner.dev_mode {
        return Ok(());
    }
    match headers.get(state.inner.student_header.as_str()).map(|v| v.to_str()) {
        None => Err(ApiError::new(StatusCode::UNAUTHORIZED, "unauthenticated", "missing identity header")),
        Some(Ok(id)) if id == student => Ok(()),
        Some(_) => Err(ApiError::new(StatusCode::FORBIDDEN, "forbidden", "identity does not match the requested student")),
    }
}

fn ensure_open(state: &AppState, round: &Round) -> ApiResult<()> {
    if round.config.is_open((state.inner.clock)()) {
        Ok(())
    } else {
        Err(ApiError::new(
            StatusCode::CONFLICT,
            "round_closed",
            format!("round `{}` is not accepting drafts", round.config.id),
        ))
    }
}

fn draft_text(body: &Bytes) -> ApiResult<String> {
    let text = std::str::from_utf8(body)
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "invalid_encoding", "draft must be UTF-8 text"))?;
    validate_draft_text(text)?;
    Ok(text.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundInfo {
    pub id: String,
    pub prompt_version: PromptVersion,
    pub provider_kind: ProviderKind,
    pub model_name: String,
    pub opens_at: Option<DateTime<Utc>>,
    pub closes_at: Option<DateTime<Utc>>,
    pub open: bool,
}

async fn list_rounds(State(state): State<AppState>) -> Json<Vec<RoundInfo>> {
    let now = (state.inner.clock)();
    Json(
        state
            .inner
            .rounds
            .values()
            .map(|r| RoundInfo {
                id: r.config.id.clone(),
                prompt_version: r.config.provider.prompt_version,
                provider_kind: r.config.provider.kind,
                model_name: r.config.provider.model_name.clone(),
                opens_at: r.config.opens_at,
                closes_at: r.config.closes_at,
                open: r.config.is_open(now),
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub table: FeedbackTable,
    pub error_count: usize,
    /// 1-based count of this student's feedback requests in the round.
    pub attempt_number: usize,
    /// `error_count` minus that of the first table; absent on attempt 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_vs_first: Option<i64>,
    pub record_id: RecordId,
}

/// (attempt number, error count of the first table) for a student's requests,
/// counted from the store.
fn attempt_stats(requests: &[InteractionRecord]) -> (usize, Option<usize>) {
    (requests.len(), requests.iter().find_map(|r| r.error_count))
}

async fn feedback(
    State(state): State<AppState>,
    UrlPath((round_id, student)): UrlPath<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<FeedbackResponse>> {
    let round = round(&state, &round_id)?;
    authorize(&state, &headers, &student)?;
    ensure_open(&state, round)?;
    let text = draft_text(&body)?;

    let lock = state.student_lock(&round_id, &student);
    let Ok(_guard) = lock.try_lock() else {
        return Err(ApiError::new(
            StatusCode::TOO_MANY_REQUESTS,
            "feedback_in_progress",
            "a feedback request for this student is already running",
        ));
    };

    let mut draft = ReportDraft::new(text.clone(), student.clone(), round_id.clone());
    draft.created_at = (state.inner.clock)();
    let outcome = round.gateway.request_feedback(&draft).await;

    let record = match &outcome {
        Ok(table) => NewRecord::feedback(&student, &round_id, &text, table.clone()),
        Err(e) => {
            tracing::warn!(round = %round_id, student = %student, code = e.code(), error = %e, "feedback failed");
            let mut r = NewRecord::failed_feedback(&student, &round_id, &text, round.gateway.prompt_version(), e.code());
            r.raw_response = e.raw_response().map(str::to_string);
            r
        }
    }
    .at(draft.created_at);

    let store = state.inner.store.clone();
    let (rid, s) = (round_id.clone(), student.clone());
    let (record_id, requests) = blocking(move || {
        let id = store.append(record)?;
        let requests = store.query(&rid, Some(&s), Some(InteractionKind::FeedbackRequest))?;
        Ok((id, requests))
    })
    .await?;

    let table = outcome.map_err(|e| match e {
        GatewayError::InvalidDraft(d) => ApiError::from(d),
        other => ApiError::new(StatusCode::BAD_GATEWAY, other.code(), other.to_string()),
    })?;
    let (attempt_number, first_errors) = attempt_stats(&requests);
    let error_count = table.error_count();
    let delta_vs_first =
        (attempt_number > 1).then(|| error_count as i64 - first_errors.unwrap_or(error_count) as i64);
    Ok(Json(FeedbackResponse {
        table,
        error_count,
        attempt_number,
        delta_vs_first,
        record_id,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionReceipt {
    pub record_id: RecordId,
    pub round_id: String,
    pub student_id: String,
    pub timestamp: DateTime<Utc>,
    /// Submissions by this student in the round, this one included.
    pub submission_number: usize,
}

async fn submit(
    State(state): State<AppState>,
    UrlPath((round_id, student)): UrlPath<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<SubmissionReceipt>> {
    let round = round(&state, &round_id)?;
    authorize(&state, &headers, &student)?;
    ensure_open(&state, round)?;
    let text = draft_text(&body)?;

    let record = NewRecord::submission(&student, &round_id, &text).at((state.inner.clock)());
    let store = state.inner.store.clone();
    let (rid, s) = (round_id.clone(), student.clone());
    let (record_id, submissions) = blocking(move || {
        let id = store.append(record)?;
        Ok((id, store.query(&rid, Some(&s), Some(InteractionKind::FinalSubmission))?))
    })
    .await?;
    let stored = submissions
        .iter()
        .find(|r| r.record_id == record_id)
        .expect("appended record is queryable");
    Ok(Json(SubmissionReceipt {
        record_id,
        round_id,
        student_id: student,
        timestamp: stored.timestamp,
        submission_number: submissions.len(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub attempt_number: usize,
    pub record_id: RecordId,
    pub timestamp: DateTime<Utc>,
    /// Absent when the provider failed.
    pub error_count: Option<usize>,
    pub delta_vs_first: Option<i64>,
    pub provider_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub round_id: String,
    pub student_id: String,
    pub attempts: Vec<Attempt>,
    pub submitted: bool,
    pub last_submission: Option<SubmissionReceipt>,
}

async fn history(
    State(state): State<AppState>,
    UrlPath((round_id, student)): UrlPath<(String, String)>,
    headers: HeaderMap,
) -> ApiResult<Json<History>> {
    round(&state, &round_id)?;
    authorize(&state, &headers, &student)?;
    let store = state.inner.store.clone();
    let (rid, s) = (round_id.clone(), student.clone());
    let records = blocking(move || store.query(&rid, Some(&s), None)).await?;

    let mut attempts = Vec::new();
    let mut first_errors = None;
    let mut submissions = Vec::new();
    for r in &records {
        match r.kind {
            InteractionKind::FinalSubmission => submissions.push(r),
            InteractionKind::FeedbackRequest => {
                first_errors = first_errors.or(r.error_count);
                let attempt_number = attempts.len() + 1;
                attempts.push(Attempt {
                    attempt_number,
                    record_id: r.record_id,
                    timestamp: r.timestamp,
                    error_count: r.error_count,
                    delta_vs_first: match (attempt_number > 1, r.error_count, first_errors) {
                        (true, Some(e), Some(f)) => Some(e as i64 - f as i64),
                        _ => None,
                    },
                    provider_error: r.provider_error.clone(),
                });
            }
        }
    }
    let last_submission = submissions.last().map(|r| SubmissionReceipt {
        record_id: r.record_id,
        round_id: round_id.clone(),
        student_id: student.clone(),
        timestamp: r.timestamp,
        submission_number: submissions.len(),
    });
    Ok(Json(History {
        round_id,
        student_id: student,
        attempts,
        submitted: !submissions.is_empty(),
        last_submission,
    }))
}

async fn round_records(state: &AppState, round_id: &str) -> ApiResult<Vec<InteractionRecord>> {
    round(state, round_id)?;
    let store = state.inner.store.clone();
    let rid = round_id.to_string();
    blocking(move || store.query(&rid, None, None)).await
}

async fn funnel(State(state): State<AppState>, UrlPath(round_id): UrlPath<String>) -> ApiResult<Response> {
    let records = round_records(&state, &round_id).await?;
    Ok(Json(compute_funnel(&records, &round_id)).into_response())
}

#[derive(Debug, Deserialize)]
struct HistogramQuery {
    #[serde(default)]
    normalized: bool,
}

async fn histogram(
    State(state): State<AppState>,
    UrlPath(round_id): UrlPath<String>,
    Query(q): Query<HistogramQuery>,
) -> ApiResult<Response> {
    let records = round_records(&state, &round_id).await?;
    let hist = interaction_histogram(&records, &round_id, q.normalized)?;
    Ok(Json(draftcheck_core::analytics::export::histogram_points(&hist)).into_response())
}

async fn tasks(State(state): State<AppState>, UrlPath(round_id): UrlPath<String>) -> ApiResult<Response> {
    let records = round_records(&state, &round_id).await?;
    Ok(Json(task_distribution(&records, &round_id)).into_response())
}

async fn categories(State(state): State<AppState>, UrlPath(round_id): UrlPath<String>) -> ApiResult<Response> {
    let records = round_records(&state, &round_id).await?;
    Ok(Json(category_distribution(&records, &round_id)?).into_response())
}
