use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ivirs_core::corpus::{load_corpus, Collection, CorpusFormat};
use ivirs_core::dds::{DdsError, DeliveryRequest};
use ivirs_core::dss::summarize;
use ivirs_core::pirs::{MisrecognitionSuggestion, WeightedQuery};
use ivirs_core::session::{
    Action, BrowseAction, ConfirmChoice, Outcome, QueryMode, QueryRequest, SessionError,
    SessionState, SummaryView, TranscriptWordView,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::state::{AppState, SlotInner};

/// JSON error body: `{"error": code, "message": text}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed_request", message)
    }

    fn unknown_session(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "unknown_session",
            format!("no session {id:?}"),
        )
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

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

fn wire_name<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::from("?"),
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match &e {
            SessionError::IllegalTransition { state, action } => Self::new(
                StatusCode::CONFLICT,
                "illegal_transition",
                format!(
                    "{} requires a state that allows it; the session is {}",
                    wire_name(action),
                    wire_name(state)
                ),
            ),
            SessionError::Precondition(_) => {
                Self::new(StatusCode::CONFLICT, "precondition_failed", e.to_string())
            }
            SessionError::Delivery(DdsError::Io { .. } | DdsError::Store { .. }) => Self::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "delivery_failed",
                e.to_string(),
            ),
            SessionError::Delivery(_) => {
                Self::new(StatusCode::CONFLICT, "delivery_rejected", e.to_string())
            }
            SessionError::Retrieval(_) => {
                Self::new(StatusCode::CONFLICT, "retrieval_rejected", e.to_string())
            }
        }
    }
}

/// Parses a JSON body, mapping every failure to 400.
fn body<T: DeserializeOwned>(raw: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(raw)
        .map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

/// Everything a client needs to render a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    #[serde(flatten)]
    pub state: SessionState,
    pub user_id: Option<String>,
    /// Words below this confidence are asked about.
    pub theta_confirm: f64,
    pub threshold: f64,
    pub query: Option<WeightedQuery>,
    /// Latest transcript of a spoken query.
    pub transcript: Vec<TranscriptWordView>,
    /// Latest summary read out.
    pub summary: Option<SummaryView>,
    pub surely_relevant: Option<usize>,
    pub ranked: usize,
    pub retrieved_set: Vec<String>,
    pub suggestions: Vec<MisrecognitionSuggestion>,
}

fn view(id: &str, slot: &SlotInner) -> SessionView {
    let snap = slot.session.snapshot();
    SessionView {
        session_id: id.to_string(),
        state: snap.state.clone(),
        user_id: snap.user_id.clone(),
        theta_confirm: slot.engine.config.theta_confirm,
        threshold: snap.threshold,
        query: snap.query.clone(),
        transcript: slot.transcript.clone(),
        summary: slot.summary.clone(),
        surely_relevant: slot.surely_relevant,
        ranked: snap.ranked.as_ref().map_or(0, |r| r.len()),
        retrieved_set: snap.retrieved_set.clone(),
        suggestions: snap.suggestions.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResponse {
    pub session: SessionView,
    pub outcome: Outcome,
    /// Seed used for a spoken query, echoed so the run can be repeated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoginBody {
    pin: String,
}

fn typed() -> QueryMode {
    QueryMode::Typed
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryBody {
    utterance: String,
    #[serde(default = "typed")]
    mode: QueryMode,
    n_recognizers: Option<usize>,
    accuracy: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfirmBody {
    position: usize,
    choice: String,
    index: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BrowseBody {
    action: BrowseAction,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    /// Approve this suggestion instead of running feedback.
    approve: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexBody {
    path: PathBuf,
    format: Option<CorpusFormat>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexReport {
    pub documents: usize,
    pub vocabulary: usize,
}

#[derive(Debug, Deserialize)]
struct SummaryParams {
    #[serde(default)]
    query: String,
}

async fn act(
    state: &AppState,
    id: &str,
    action: Action,
    seed: Option<u64>,
) -> Result<Json<ActionResponse>, ApiError> {
    let slot = state
        .slot(id)
        .ok_or_else(|| ApiError::unknown_session(id))?;
    let mut inner = slot.inner.lock().await;
    let engine = inner.engine.clone();
    let outcome = inner.session.apply(&engine, action)?;
    inner.absorb(&outcome);
    Ok(Json(ActionResponse {
        session: view(id, &inner),
        outcome,
        seed,
    }))
}

async fn create_session(State(state): State<Arc<AppState>>) -> (StatusCode, Json<SessionView>) {
    let (id, slot) = state.open();
    let inner = slot.inner.lock().await;
    (StatusCode::CREATED, Json(view(&id, &inner)))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let slot = state
        .slot(&id)
        .ok_or_else(|| ApiError::unknown_session(&id))?;
    let inner = slot.inner.lock().await;
    Ok(Json(view(&id, &inner)))
}

async fn login(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<LoginBody>, JsonRejection>,
) -> Result<Json<ActionResponse>, ApiError> {
    let Json(b) = payload?;
    act(&state, &id, Action::Login { pin: b.pin }, None).await
}

async fn query(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<QueryBody>, JsonRejection>,
) -> Result<Json<ActionResponse>, ApiError> {
    let Json(b) = payload?;
    let request = match b.mode {
        QueryMode::Typed => QueryRequest::typed(b.utterance),
        QueryMode::SpokenSimulated => {
            let mut model = state.default_model;
            if let Some(a) = b.accuracy {
                model = model.with_accuracy(a);
            }
            model
                .validate()
                .map_err(|e| ApiError::bad_request(e.to_string()))?;
            let n = b.n_recognizers.unwrap_or(1);
            if n == 0 {
                return Err(ApiError::bad_request("n_recognizers must be at least 1"));
            }
            QueryRequest::spoken(b.utterance, n, model, b.seed.unwrap_or_else(rand::random))
        }
    };
    let seed = (request.mode == QueryMode::SpokenSimulated).then_some(request.seed);
    act(&state, &id, Action::SubmitQuery(request), seed).await
}

async fn confirm(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<ConfirmBody>, JsonRejection>,
) -> Result<Json<ActionResponse>, ApiError> {
    let Json(b) = payload?;
    let choice = match (b.choice.as_str(), b.index) {
        ("keep", None) => ConfirmChoice::Keep,
        ("drop", None) => ConfirmChoice::Drop,
        ("re_utter" | "re-utter", None) => ConfirmChoice::ReUtter,
        ("alternative", Some(i)) => ConfirmChoice::Alternative(i),
        ("alternative", None) => {
            return Err(ApiError::bad_request(
                "choice \"alternative\" needs an index",
            ))
        }
        (c, _) => {
            return Err(ApiError::bad_request(format!(
                "unknown choice {c:?} (expected keep, re_utter, drop or alternative with index)"
            )))
        }
    };
    let action = Action::Confirm {
        position: b.position,
        choice,
    };
    act(&state, &id, action, None).await
}

async fn browse(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<BrowseBody>, JsonRejection>,
) -> Result<Json<ActionResponse>, ApiError> {
    let Json(b) = payload?;
    act(&state, &id, Action::Browse { browse: b.action }, None).await
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    raw: Bytes,
) -> Result<Json<ActionResponse>, ApiError> {
    let b: FeedbackBody = if raw.iter().all(u8::is_ascii_whitespace) {
        FeedbackBody::default()
    } else {
        body(&raw)?
    };
    let action = match b.approve {
        Some(index) => Action::ApproveSuggestion { index },
        None => Action::Feedback,
    };
    act(&state, &id, action, None).await
}

async fn delivery(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<DeliveryRequest>, JsonRejection>,
) -> Result<Json<ActionResponse>, ApiError> {
    let Json(b) = payload?;
    act(&state, &id, Action::Deliver(b), None).await
}

async fn close(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<ActionResponse>, ApiError> {
    act(&state, &id, Action::Close, None).await
}

async fn doc_summary(
    State(state): State<Arc<AppState>>,
    Path(doc_id): Path<String>,
    Query(params): Query<SummaryParams>,
) -> Result<Json<SummaryView>, ApiError> {
    let engine = state.engine();
    let doc = engine.collection.document(&doc_id).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_document",
            format!("no document {doc_id:?}"),
        )
    })?;
    let an = engine.collection.analyzer();
    let q = WeightedQuery::typed(&params.query, an);
    let s = summarize(doc, an, &q, &engine.config.summary_weights)
        .map_err(|e| ApiError::new(StatusCode::CONFLICT, "precondition_failed", e.to_string()))?;
    Ok(Json(SummaryView {
        doc_id: s.doc_id,
        title: doc.title.clone(),
        text: s.text,
    }))
}

async fn rebuild_index(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<IndexBody>, JsonRejection>,
) -> Result<Json<IndexReport>, ApiError> {
    let Json(b) = payload?;
    let format = b.format.unwrap_or(state.default_format);
    let analyzer = state.engine().collection.analyzer().clone();
    let built = tokio::task::spawn_blocking(move || {
        let docs = load_corpus(&b.path, format, &analyzer)?;
        Collection::build(docs, analyzer)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
    .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let engine = state.swap_collection(built);
    let index = engine.collection.index();
    Ok(Json(IndexReport {
        documents: index.doc_count(),
        vocabulary: index.vocabulary_size(),
    }))
}

async fn log_request(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let started = Instant::now();
    let response = next.run(req).await;
    tracing::info!(
        target: "ivirs::request",
        method = %method,
        path = %path,
        status = response.status().as_u16(),
        latency_ms = started.elapsed().as_secs_f64() * 1000.0,
    );
    response
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/login", post(login))
        .route("/sessions/{id}/query", post(query))
        .route("/sessions/{id}/confirm", post(confirm))
        .route("/sessions/{id}/browse", post(browse))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/delivery", post(delivery))
        .route("/sessions/{id}/close", post(close))
        .route("/docs/{id}/summary", get(doc_summary))
        .route("/admin/index", post(rebuild_index))
        .layer(middleware::from_fn(log_request))
        .with_state(state)
}
