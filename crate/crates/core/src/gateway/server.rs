use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::task::JoinHandle;

use super::session::Session;
use super::{
    ChatMessage, ChatRole, CreatedSession, ErrorBody, PostMessage, SessionStatus, StreamFrame,
    TaskAccepted, UploadedImage,
};
use crate::agent::{Agent, AgentEvent, AgentTask, EventBody, EventSink, MemoryBuffer};
use crate::backend::ReasoningBackend;
use crate::media::{dicom, display, to_display_image, ArtifactStore, MediaKind};
use crate::toolkit::{PublicToolSpec, ToolBus, Toolkit};

/// Environment variable holding the static bearer token. Unset means no auth.
pub const TOKEN_ENV: &str = "CXR_GATEWAY_TOKEN";

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub token: Option<String>,
    pub session_ttl: Duration,
    /// Wall-clock budget for each posted message.
    pub budget_ms: u64,
    pub max_upload_bytes: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            token: None,
            session_ttl: Duration::from_secs(2 * 60 * 60),
            budget_ms: 120_000,
            max_upload_bytes: 64 << 20,
        }
    }
}

impl GatewayConfig {
    pub fn from_env() -> Self {
        Self {
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            ..Self::default()
        }
    }
}

/// Shared gateway state: sessions, the agent, and what it runs against.
pub struct Gateway {
    config: GatewayConfig,
    agent: Agent,
    backend: Arc<dyn ReasoningBackend>,
    toolkit: Arc<dyn Toolkit>,
    store: Arc<ArtifactStore>,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
}

impl Gateway {
    pub fn new(
        config: GatewayConfig,
        agent: Agent,
        backend: Arc<dyn ReasoningBackend>,
        toolkit: Arc<dyn Toolkit>,
        store: Arc<ArtifactStore>,
    ) -> Arc<Self> {
        Arc::new(Self {
            config,
            agent,
            backend,
            toolkit,
            store,
            sessions: Mutex::default(),
        })
    }

    /// Uploads land in the bus's own store so tools can read them.
    pub fn with_bus(
        config: GatewayConfig,
        agent: Agent,
        backend: Arc<dyn ReasoningBackend>,
        bus: Arc<ToolBus>,
    ) -> Arc<Self> {
        let store = bus.store().clone();
        Self::new(config, agent, backend, bus, store)
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("sessions poisoned").len()
    }

    /// Drop idle sessions that outlived the TTL. Running ones are kept.
    pub fn sweep(&self) {
        let ttl = self.config.session_ttl;
        self.sessions.lock().expect("sessions poisoned").retain(|_, s| {
            let st = s.lock();
            st.status == SessionStatus::Running || st.last_active.elapsed() < ttl
        });
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sweep();
        self.sessions
            .lock()
            .expect("sessions poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session {id}")))
    }

    /// Bind and serve on `addr` (port 0 for ephemeral).
    pub async fn bind(self: &Arc<Self>, addr: SocketAddr) -> std::io::Result<GatewayHandle> {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let app = router(self.clone());
        let task = tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                tracing::error!("gateway stopped: {e}");
            }
        });
        Ok(GatewayHandle { addr, task })
    }
}

/// A running gateway. Dropping it stops the server.
pub struct GatewayHandle {
    pub addr: SocketAddr,
    task: JoinHandle<()>,
}

impl GatewayHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Wait until the server stops (it only does on error).
    pub async fn join(mut self) {
        let _ = (&mut self.task).await;
    }
}

impl Drop for GatewayHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, detail: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                kind: kind.to_string(),
                detail: detail.into(),
            },
        }
    }

    fn unprocessable(kind: &str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, kind, detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(gw: Arc<Gateway>) -> Router {
    let limit = gw.config.max_upload_bytes;
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/images", post(upload_image))
        .route("/v1/sessions/{id}/messages", post(post_message))
        .route("/v1/sessions/{id}/events", get(stream_events))
        .route("/v1/tools", get(list_tools))
        .route("/v1/artifacts/{id}", get(get_artifact))
        .layer(DefaultBodyLimit::max(limit))
        .layer(middleware::from_fn_with_state(gw.clone(), require_token))
        .with_state(gw)
}

async fn require_token(State(gw): State<Arc<Gateway>>, req: Request, next: Next) -> Response {
    if let Some(expected) = &gw.config.token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(expected.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

async fn create_session(State(gw): State<Arc<Gateway>>) -> (StatusCode, Json<CreatedSession>) {
    gw.sweep();
    let id = uuid::Uuid::new_v4().simple().to_string();
    gw.sessions
        .lock()
        .expect("sessions poisoned")
        .insert(id.clone(), Session::new(id.clone()));
    (StatusCode::CREATED, Json(CreatedSession { id }))
}

async fn get_session(State(gw): State<Arc<Gateway>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(gw.session(&id)?.view()).into_response())
}

async fn upload_image(
    State(gw): State<Arc<Gateway>>,
    Path(id): Path<String>,
    mut multipart: Multipart,
) -> ApiResult<Response> {
    let session = gw.session(&id)?;
    let mut bytes = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_multipart", e.to_string()))?
    {
        let data = field
            .bytes()
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_multipart", e.to_string()))?;
        if bytes.is_none() {
            bytes = Some(data);
        }
    }
    let bytes = bytes.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "bad_multipart", "no file part"))?;

    let uploaded = if dicom::is_dicom(&bytes) {
        let parsed = dicom::parse_dicom(&bytes).map_err(|e| ApiError::unprocessable(e.kind(), e.to_string()))?;
        let original = gw.store.store(&bytes, MediaKind::Dicom);
        let image = gw.store.store(&to_display_image(&parsed), MediaKind::Png);
        UploadedImage {
            image,
            original: Some(original),
        }
    } else if display::is_png(&bytes) {
        UploadedImage {
            image: gw.store.store(&bytes, MediaKind::Png),
            original: None,
        }
    } else if display::is_jpeg(&bytes) {
        UploadedImage {
            image: gw.store.store(&bytes, MediaKind::Jpeg),
            original: None,
        }
    } else {
        return Err(ApiError::unprocessable(
            "unsupported_media",
            "expected DICOM (Part 10), PNG or JPEG",
        ));
    };

    let mut st = session.lock();
    if !st.images.contains(&uploaded.image) {
        st.images.push(uploaded.image.clone());
    }
    st.last_active = Instant::now();
    Ok((StatusCode::CREATED, Json(uploaded)).into_response())
}

/// Streams non-terminal events into the session log as they happen. The
/// terminal event is appended by the task wrapper together with the switch
/// back to idle, so a client that sees it can post again immediately.
struct FrameSink {
    session: Arc<Session>,
    task_id: String,
}

impl EventSink for FrameSink {
    fn emit(&self, event: &AgentEvent) {
        if event.body.is_terminal() {
            return;
        }
        let mut st = self.session.lock();
        self.session
            .append(&mut st, |seq| StreamFrame::new(seq, &self.task_id, event.clone()));
    }
}

async fn post_message(
    State(gw): State<Arc<Gateway>>,
    Path(id): Path<String>,
    body: Result<Json<PostMessage>, JsonRejection>,
) -> ApiResult<Response> {
    let session = gw.session(&id)?;
    let Json(msg) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    if msg.text.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty_message", "message text is empty"));
    }
    let task_id = uuid::Uuid::new_v4().simple().to_string();

    let (task, memory, first_sequence) = {
        let mut st = session.lock();
        if st.status == SessionStatus::Running {
            return Err(ApiError::new(StatusCode::CONFLICT, "session_busy", "a task is already running"));
        }
        let images = match &msg.image_ids {
            None => st.images.clone(),
            Some(ids) => ids
                .iter()
                .map(|i| {
                    st.images.iter().find(|r| &r.id == i).cloned().ok_or_else(|| {
                        ApiError::new(StatusCode::BAD_REQUEST, "unknown_image", format!("image {i} not in session"))
                    })
                })
                .collect::<ApiResult<_>>()?,
        };
        let memory = st.memory.take().unwrap_or_else(|| MemoryBuffer::new(st.id.clone()));
        st.status = SessionStatus::Running;
        st.last_active = Instant::now();
        st.messages.push(ChatMessage {
            role: ChatRole::User,
            text: msg.text.clone(),
            task_id: task_id.clone(),
        });
        let task = AgentTask::new(st.id.clone(), msg.text, gw.config.budget_ms).with_images(images);
        (task, memory, st.frames.len() as u64)
    };

    tokio::spawn(run_task(gw.clone(), session, task_id.clone(), task, memory));
    Ok((
        StatusCode::ACCEPTED,
        Json(TaskAccepted {
            task_id,
            first_sequence,
        }),
    )
        .into_response())
}

async fn run_task(gw: Arc<Gateway>, session: Arc<Session>, task_id: String, task: AgentTask, mut memory: MemoryBuffer) {
    let started = Instant::now();
    let sink = FrameSink {
        session: session.clone(),
        task_id: task_id.clone(),
    };
    let inner = {
        let gw = gw.clone();
        tokio::spawn(async move {
            let out = gw
                .agent
                .run_with_sink(task, &*gw.backend, &*gw.toolkit, &mut memory, Some(&sink))
                .await;
            (memory, out)
        })
    };
    let joined = inner.await;

    let mut st = session.lock();
    let last_cycle = st
        .frames
        .iter()
        .rev()
        .find(|f| f.task_id == task_id)
        .map(|f| f.cycle)
        .unwrap_or(0);
    let failure = |kind: &str, detail: String| {
        let event = AgentEvent {
            cycle_index: last_cycle,
            timestamp_ms: started.elapsed().as_millis() as u64,
            body: EventBody::FinalResponse {
                text: format!("The agent stopped without an answer: {detail}"),
            },
        };
        (event, Some(ErrorBody { kind: kind.to_string(), detail }))
    };
    let (terminal, error) = match joined {
        Ok((mem, Ok(resp))) => {
            st.memory = Some(mem);
            match resp.transcript.last() {
                Some(e) if e.body.is_terminal() => (e.clone(), None),
                _ => failure("protocol_violation", "transcript lacks a terminal event".into()),
            }
        }
        Ok((mem, Err(e))) => {
            st.memory = Some(mem);
            failure(e.kind(), e.to_string())
        }
        Err(e) => {
            // the loop panicked; its memory is gone
            st.memory = Some(MemoryBuffer::new(st.id.clone()));
            failure("internal", e.to_string())
        }
    };
    let text = match &terminal.body {
        EventBody::FinalResponse { text } | EventBody::UserPrompt { text } | EventBody::TimeoutResponse { text, .. } => text.clone(),
        _ => String::new(),
    };
    st.messages.push(ChatMessage {
        role: ChatRole::Assistant,
        text,
        task_id: task_id.clone(),
    });
    st.status = SessionStatus::Idle;
    st.last_active = Instant::now();
    session.append(&mut st, |seq| {
        let mut f = StreamFrame::new(seq, &task_id, terminal);
        f.error = error;
        f
    });
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    from: Option<u64>,
}

async fn stream_events(
    State(gw): State<Arc<Gateway>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let session = gw.session(&id)?;
    // an explicit ?from wins over the reconnect header
    let from = q.from.unwrap_or_else(|| {
        headers
            .get("last-event-id")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse::<u64>().ok())
            .map_or(0, |last| last + 1)
    });
    let rx = session.subscribe();
    let stream = futures::stream::unfold(
        (session, rx, from, VecDeque::<StreamFrame>::new()),
        |(session, mut rx, mut cursor, mut pending)| async move {
            loop {
                if let Some(frame) = pending.pop_front() {
                    let event = Event::default()
                        .id(frame.sequence.to_string())
                        .event(frame.kind.clone())
                        .json_data(&frame)
                        .expect("frame serializes");
                    return Some((Ok::<_, Infallible>(event), (session, rx, cursor, pending)));
                }
                rx.borrow_and_update();
                let fresh = session.frames_from(cursor);
                if fresh.is_empty() {
                    if rx.changed().await.is_err() {
                        return None;
                    }
                    continue;
                }
                cursor += fresh.len() as u64;
                pending.extend(fresh);
            }
        },
    );
    Ok(Sse::new(stream)
        .keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
        .into_response())
}

async fn list_tools(State(gw): State<Arc<Gateway>>) -> Json<Vec<PublicToolSpec>> {
    Json(gw.toolkit.registry().public_specs())
}

async fn get_artifact(State(gw): State<Arc<Gateway>>, Path(id): Path<String>) -> ApiResult<Response> {
    let kind = gw
        .store
        .get_ref(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no artifact {id}")))?
        .kind;
    let bytes = gw
        .store
        .load(&id)
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, e.kind(), e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, kind.content_type())], bytes.as_ref().clone()).into_response())
}
