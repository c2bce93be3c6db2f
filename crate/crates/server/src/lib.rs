//! HTTP API over [`autodidact::Engine`]. Every handler runs the engine call on
//! the blocking pool and returns its JSON; errors use the body
//! `{"error": code, "detail": text}`.

use std::sync::Arc;

use autodidact::engine::{Engine, EngineError, ErrorKind};
use autodidact::tutor::{Channel, Trigger};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub auth_token: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, detail: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: code.to_string(),
                detail: detail.into(),
            },
        }
    }
}

pub fn status_for(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::NotFound => StatusCode::NOT_FOUND,
        ErrorKind::Conflict => StatusCode::CONFLICT,
        ErrorKind::Invalid => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorKind::Backend => StatusCode::BAD_GATEWAY,
        ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        Self::new(status_for(e.kind), e.code, e.detail)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "ValidationError",
            e.body_text(),
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = %self.body.error, detail = %self.body.detail, "request failed");
        }
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn run<T: Send + 'static>(
    state: &AppState,
    f: impl FnOnce(&Engine) -> Result<T, EngineError> + Send + 'static,
) -> ApiResult<T> {
    let engine = state.engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
        .map_err(ApiError::from)
}

fn body<T: DeserializeOwned>(b: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    Ok(b?.0)
}

#[derive(Deserialize)]
struct NewCourse {
    title: String,
    #[serde(default)]
    syllabus: Option<String>,
}

async fn create_course(
    State(s): State<AppState>,
    b: Result<Json<NewCourse>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let b = body(b)?;
    let record = run(&s, move |e| {
        e.create_course(&b.title, b.syllabus.as_deref())
    })
    .await?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn roadmap(State(s): State<AppState>, Path(c): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(run(&s, move |e| e.roadmap(&c)).await?))
}

async fn progress(
    State(s): State<AppState>,
    Path((u, c)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(run(&s, move |e| e.progress(&u, &c)).await?))
}

async fn start(
    State(s): State<AppState>,
    Path((u, n)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(run(&s, move |e| e.start_node(&u, &n)).await?))
}

async fn deck(
    State(s): State<AppState>,
    Path((u, n)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(run(&s, move |e| e.deck(&u, &n)).await?))
}

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(default = "default_format")]
    format: String,
}

fn default_format() -> String {
    "json".into()
}

async fn export(
    State(s): State<AppState>,
    Path((u, n)): Path<(String, String)>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<impl IntoResponse> {
    let format = q.format.clone();
    let bytes = run(&s, move |e| e.export_deck(&u, &n, &format)).await?;
    let ctype = if q.format == "markdown" {
        "text/markdown; charset=utf-8"
    } else {
        "application/json"
    };
    Ok(([(header::CONTENT_TYPE, ctype)], bytes))
}

async fn narration(
    State(s): State<AppState>,
    Path((u, n)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(run(&s, move |e| e.narration(&u, &n)).await?))
}

#[derive(Deserialize)]
struct InterruptBody {
    #[serde(default = "default_trigger")]
    trigger: Trigger,
}

fn default_trigger() -> Trigger {
    Trigger::UiButton
}

async fn interrupt(
    State(s): State<AppState>,
    Path((u, n)): Path<(String, String)>,
    b: Option<Json<InterruptBody>>,
) -> ApiResult<impl IntoResponse> {
    let trigger = b.map(|b| b.0.trigger).unwrap_or(Trigger::UiButton);
    Ok(Json(run(&s, move |e| e.interrupt(&u, &n, trigger)).await?))
}

async fn resume(
    State(s): State<AppState>,
    Path((u, n)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(run(&s, move |e| e.resume(&u, &n)).await?))
}

async fn advance(
    State(s): State<AppState>,
    Path((u, n)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(run(&s, move |e| e.advance(&u, &n)).await?))
}

#[derive(Deserialize)]
struct DoubtBody {
    question: String,
    #[serde(default = "default_channel")]
    channel: Channel,
}

fn default_channel() -> Channel {
    Channel::Chat
}

async fn doubt(
    State(s): State<AppState>,
    Path((u, n)): Path<(String, String)>,
    b: Result<Json<DoubtBody>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let b = body(b)?;
    Ok(Json(
        run(&s, move |e| e.doubt(&u, &n, &b.question, b.channel)).await?,
    ))
}

async fn quiz(
    State(s): State<AppState>,
    Path((u, n)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(run(&s, move |e| e.issue_quiz(&u, &n)).await?))
}

#[derive(Deserialize)]
struct QuizAnswers {
    answers: Vec<usize>,
}

async fn submit_quiz(
    State(s): State<AppState>,
    Path(q): Path<String>,
    b: Result<Json<QuizAnswers>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let b = body(b)?;
    Ok(Json(run(&s, move |e| e.submit_quiz(&q, &b.answers)).await?))
}

#[derive(Deserialize)]
struct NotesQuery {
    user: Option<String>,
    #[serde(default = "default_format")]
    format: String,
}

async fn notes(
    State(s): State<AppState>,
    Path(c): Path<String>,
    Query(q): Query<NotesQuery>,
) -> ApiResult<Response> {
    let user = q.user.ok_or_else(|| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "ValidationError",
            "query parameter user is required",
        )
    })?;
    let doc = run(&s, move |e| e.notes(&c, &user)).await?;
    match q.format.as_str() {
        "json" => Ok(Json(doc).into_response()),
        "markdown" => Ok((
            [(header::CONTENT_TYPE, "text/markdown; charset=utf-8")],
            autodidact::assessment::notes_markdown(&doc),
        )
            .into_response()),
        other => Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "UnsupportedFormat",
            format!("unsupported format {other:?}"),
        )),
    }
}

#[derive(Deserialize)]
struct ExamBody {
    #[serde(default)]
    n: Option<usize>,
}

async fn exam(
    State(s): State<AppState>,
    Path((u, c)): Path<(String, String)>,
    b: Option<Json<ExamBody>>,
) -> ApiResult<impl IntoResponse> {
    let n = b
        .and_then(|b| b.0.n)
        .unwrap_or(autodidact::engine::DEFAULT_EXAM_QUESTIONS);
    Ok(Json(run(&s, move |e| e.issue_exam(&u, &c, n)).await?))
}

#[derive(Deserialize)]
struct ExamAnswers {
    answers: Vec<String>,
}

async fn submit_exam(
    State(s): State<AppState>,
    Path(x): Path<String>,
    b: Result<Json<ExamAnswers>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let b = body(b)?;
    Ok(Json(run(&s, move |e| e.submit_exam(&x, &b.answers)).await?))
}

async fn require_token(
    State(s): State<AppState>,
    headers: HeaderMap,
    req: Request,
    next: Next,
) -> Response {
    if let Some(token) = &s.auth_token {
        let ok = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::new(
                StatusCode::UNAUTHORIZED,
                "Unauthorized",
                "missing or wrong bearer token",
            )
            .into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState) -> Router {
    let node = "/users/{u}/nodes/{n}";
    Router::new()
        .route("/courses", post(create_course))
        .route("/courses/{c}/roadmap", get(roadmap))
        .route("/courses/{c}/notes", get(notes))
        .route("/users/{u}/courses/{c}/progress", get(progress))
        .route("/users/{u}/courses/{c}/exam", post(exam))
        .route(&format!("{node}/start"), post(start))
        .route(&format!("{node}/deck"), get(deck))
        .route(&format!("{node}/deck/export"), get(export))
        .route(&format!("{node}/narration"), get(narration))
        .route(&format!("{node}/session/interrupt"), post(interrupt))
        .route(&format!("{node}/session/resume"), post(resume))
        .route(&format!("{node}/session/advance"), post(advance))
        .route(&format!("{node}/doubt"), post(doubt))
        .route(&format!("{node}/quiz"), post(quiz))
        .route("/quizzes/{q}/submit", post(submit_quiz))
        .route("/exams/{e}/submit", post(submit_exam))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: AppState, listen: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
