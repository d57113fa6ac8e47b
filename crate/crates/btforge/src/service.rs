//! HTTP session service: every generation runs inside a session whose
//! mutations are published as an ordered event stream.
//!
//! Routes:
//! - `POST /sessions` creates a session and runs its scheme (201).
//! - `GET /sessions/{id}` returns the session resource.
//! - `POST /sessions/{id}/feedback` sends human feedback to a waiting session.
//! - `GET /sessions/{id}/events` streams events (server-sent events).
//! - `GET /healthz`.

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use btforge_core::sim::SimReport;
use btforge_core::world::WorldFile;
use btforge_core::{Atom, Domain};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::broadcast;

use crate::llm::ChatProvider;
use crate::schemes::{
    apply_feedback, generate, start_hitl, GenContext, GenerationMetrics, GenerationResult,
    HitlSession, HitlState, PlannerKind, SchemeError, SchemeId,
};
use crate::task::{default_instruction, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    AwaitingFeedback,
    Finalized,
    Error,
}

/// Client view of a session; also what a replay of its events rebuilds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResource {
    pub id: String,
    pub task: String,
    pub scheme: SchemeId,
    pub planner: PlannerKind,
    pub provider: String,
    pub status: SessionStatus,
    /// Latest tree document.
    pub tree: Option<Value>,
    /// Latest simulation of that tree.
    pub simulation: Option<SimReport>,
    pub feedback: Vec<String>,
    pub metrics: Option<GenerationMetrics>,
    pub error: Option<String>,
    /// Sequence number of the last event applied.
    pub last_seq: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    StateChange,
    TreeUpdated,
    SimTrace,
    Metrics,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::StateChange => "state_change",
            EventKind::TreeUpdated => "tree_updated",
            EventKind::SimTrace => "sim_trace",
            EventKind::Metrics => "metrics",
        }
    }
}

/// One session mutation. Sequence numbers start at 1 and increase by 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub data: Value,
}

/// Payload of a `state_change` event. The first event of a session also
/// carries its identity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateChange {
    pub status: Option<SessionStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<SessionIdentity>,
    /// Feedback text that caused the transition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionIdentity {
    pub id: String,
    pub task: String,
    pub scheme: SchemeId,
    pub planner: PlannerKind,
    pub provider: String,
}

impl SessionResource {
    /// Folds one event into the resource.
    pub fn apply(
        resource: Option<SessionResource>,
        event: &SessionEvent,
    ) -> Option<SessionResource> {
        let mut r = match (resource, event.kind) {
            (Some(r), _) => r,
            (None, EventKind::StateChange) => {
                let change: StateChange = serde_json::from_value(event.data.clone()).ok()?;
                let ident = change.session?;
                SessionResource {
                    id: ident.id,
                    task: ident.task,
                    scheme: ident.scheme,
                    planner: ident.planner,
                    provider: ident.provider,
                    status: SessionStatus::Running,
                    tree: None,
                    simulation: None,
                    feedback: Vec::new(),
                    metrics: None,
                    error: None,
                    last_seq: 0,
                }
            }
            (None, _) => return None,
        };
        match event.kind {
            EventKind::StateChange => {
                let change: StateChange = serde_json::from_value(event.data.clone()).ok()?;
                if let Some(status) = change.status {
                    r.status = status;
                }
                r.feedback.extend(change.feedback);
                if change.error.is_some() {
                    r.error = change.error;
                }
            }
            EventKind::TreeUpdated => r.tree = event.data.get("tree").cloned(),
            EventKind::SimTrace => r.simulation = serde_json::from_value(event.data.clone()).ok(),
            EventKind::Metrics => r.metrics = serde_json::from_value(event.data.clone()).ok(),
        }
        r.last_seq = event.seq;
        Some(r)
    }

    /// Rebuilds a resource from its full event log.
    pub fn replay<'a>(
        events: impl IntoIterator<Item = &'a SessionEvent>,
    ) -> Option<SessionResource> {
        events.into_iter().fold(None, SessionResource::apply)
    }
}

/// Task reference in a create request: a task id from the loaded suite,
/// or an inline world.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TaskRef {
    Named(String),
    Inline {
        #[serde(default)]
        id: Option<String>,
        world: WorldFile,
        #[serde(default)]
        goal: Option<String>,
        #[serde(default)]
        instruction: Option<String>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub task: TaskRef,
    pub scheme: SchemeId,
    #[serde(default)]
    pub provider: Option<String>,
    #[serde(default)]
    pub planner: PlannerKind,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackBody {
    pub text: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("unknown session `{0}`")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (
            status,
            Json(serde_json::json!({ "error": self.to_string() })),
        )
            .into_response()
    }
}

/// Service configuration: the domain, named tasks and named providers.
pub struct ServiceConfig {
    pub domain: Arc<Domain>,
    pub tasks: BTreeMap<String, Task>,
    pub providers: BTreeMap<String, Arc<dyn ChatProvider>>,
    /// Provider used when a request names none.
    pub default_provider: String,
    /// Template for every session's context; domain and provider are replaced.
    pub template: Option<GenContext>,
}

struct Log {
    events: Vec<SessionEvent>,
    resource: SessionResource,
}

struct Session {
    /// Serializes operations; held for the duration of a scheme call.
    op: tokio::sync::Mutex<Option<HitlSession>>,
    log: Mutex<Log>,
    tx: broadcast::Sender<SessionEvent>,
    ctx: GenContext,
}

impl Session {
    fn publish(&self, kind: EventKind, data: Value) {
        let mut log = self.log.lock().expect("session log lock");
        let event = SessionEvent {
            seq: log.events.len() as u64 + 1,
            kind,
            data,
        };
        let resource = SessionResource::apply(Some(log.resource.clone()), &event)
            .expect("log holds a resource");
        log.resource = resource;
        log.events.push(event.clone());
        // no subscribers is fine
        let _ = self.tx.send(event);
    }

    fn state_change(&self, change: StateChange) {
        self.publish(
            EventKind::StateChange,
            serde_json::to_value(change).expect("serializes"),
        );
    }

    fn publish_result(&self, result: &GenerationResult) {
        if let Some(doc) = result.document() {
            let tree: Value = serde_json::from_str(&doc).expect("canonical documents are JSON");
            self.publish(EventKind::TreeUpdated, serde_json::json!({ "tree": tree }));
        }
        if let Some(report) = &result.simulation {
            self.publish(
                EventKind::SimTrace,
                serde_json::to_value(report).expect("serializes"),
            );
        }
        self.publish(
            EventKind::Metrics,
            serde_json::to_value(result.metrics()).expect("serializes"),
        );
    }

    fn resource(&self) -> SessionResource {
        self.log.lock().expect("session log lock").resource.clone()
    }

    fn status(&self) -> SessionStatus {
        self.log.lock().expect("session log lock").resource.status
    }
}

pub struct AppState {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            config,
            sessions: RwLock::default(),
        })
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(id.to_owned()))
    }

    fn resolve_task(&self, task: TaskRef) -> Result<Task, ApiError> {
        match task {
            TaskRef::Named(id) => self
                .config
                .tasks
                .get(&id)
                .cloned()
                .ok_or_else(|| ApiError::Unprocessable(format!("unknown task `{id}`"))),
            TaskRef::Inline {
                id,
                mut world,
                goal,
                instruction,
            } => {
                if let Some(goal) = goal {
                    world.goal =
                        Atom::parse(&goal).map_err(|e| ApiError::Unprocessable(e.to_string()))?;
                }
                let (initial, goal) = self
                    .config
                    .domain
                    .load_world(&world)
                    .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
                let instruction = instruction.unwrap_or_else(|| default_instruction(&goal));
                Ok(Task::new(
                    id.unwrap_or_else(|| "inline".to_owned()),
                    instruction,
                    initial,
                    goal,
                ))
            }
        }
    }

    fn context(&self, provider: Arc<dyn ChatProvider>) -> GenContext {
        match &self.config.template {
            Some(t) => GenContext {
                domain: self.config.domain.clone(),
                provider,
                ..t.clone()
            },
            None => GenContext::new(self.config.domain.clone(), provider),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/feedback", post(post_feedback))
        .route("/sessions/{id}/events", get(stream_events))
        .with_state(state)
}

async fn healthz() -> Json<Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::Unprocessable(format!("malformed body: {e}")))
}

fn failure(error: &SchemeError) -> StateChange {
    StateChange {
        status: Some(SessionStatus::Error),
        error: Some(error.to_string()),
        ..StateChange::default()
    }
}

enum Outcome {
    Hitl(Result<Box<HitlSession>, SchemeError>),
    Done(Result<Box<GenerationResult>, SchemeError>),
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: CreateSession = parse_body(&body)?;
    let provider_name = req
        .provider
        .unwrap_or_else(|| app.config.default_provider.clone());
    let provider = app
        .config
        .providers
        .get(&provider_name)
        .cloned()
        .ok_or_else(|| {
            ApiError::Unprocessable(format!("provider `{provider_name}` is not configured"))
        })?;
    let task = app.resolve_task(req.task)?;
    let id = uuid::Uuid::new_v4().to_string();
    let identity = SessionIdentity {
        id: id.clone(),
        task: task.id.clone(),
        scheme: req.scheme,
        planner: req.planner,
        provider: provider_name,
    };
    let first = StateChange {
        status: Some(SessionStatus::Running),
        session: Some(identity),
        ..StateChange::default()
    };
    let first_event = SessionEvent {
        seq: 1,
        kind: EventKind::StateChange,
        data: serde_json::to_value(first).expect("serializes"),
    };
    let resource = SessionResource::apply(None, &first_event).expect("identity event");
    let (tx, _) = broadcast::channel(256);
    let session = Arc::new(Session {
        op: tokio::sync::Mutex::new(None),
        log: Mutex::new(Log {
            events: vec![first_event],
            resource,
        }),
        tx,
        ctx: app.context(provider),
    });
    let mut guard = session.op.lock().await;
    app.sessions
        .write()
        .expect("session map lock")
        .insert(id.clone(), session.clone());

    let ctx = session.ctx.clone();
    let (scheme, planner) = (req.scheme, req.planner);
    let outcome = tokio::task::spawn_blocking(move || match scheme {
        SchemeId::Hitl => Outcome::Hitl(start_hitl(&task, &ctx).map(Box::new)),
        _ => Outcome::Done(generate(scheme, planner, &task, &ctx).map(Box::new)),
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?;
    match outcome {
        Outcome::Hitl(Ok(hitl)) => {
            session.publish_result(&hitl.result);
            session.state_change(StateChange {
                status: Some(SessionStatus::AwaitingFeedback),
                ..StateChange::default()
            });
            *guard = Some(*hitl);
        }
        Outcome::Done(Ok(result)) => {
            session.publish_result(&result);
            session.state_change(StateChange {
                status: Some(SessionStatus::Finalized),
                ..StateChange::default()
            });
        }
        Outcome::Hitl(Err(e)) | Outcome::Done(Err(e)) => session.state_change(failure(&e)),
    }
    drop(guard);
    Ok((StatusCode::CREATED, Json(session.resource())).into_response())
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionResource>, ApiError> {
    Ok(Json(app.session(&id)?.resource()))
}

async fn post_feedback(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<SessionResource>, ApiError> {
    let session = app.session(&id)?;
    let req: FeedbackBody = parse_body(&body)?;
    let mut guard = session
        .op
        .try_lock()
        .map_err(|_| ApiError::Conflict("session is busy".to_owned()))?;
    let status = session.status();
    if status != SessionStatus::AwaitingFeedback {
        return Err(ApiError::Conflict(format!(
            "session is {}, not awaiting feedback",
            serde_json::to_value(status)
                .expect("serializes")
                .as_str()
                .unwrap_or("busy")
        )));
    }
    let mut hitl = guard
        .take()
        .ok_or_else(|| ApiError::Internal("waiting session has no generation state".to_owned()))?;
    if req.text.trim().is_empty() {
        apply_feedback(&mut hitl, &req.text, &session.ctx)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        session.state_change(StateChange {
            status: Some(SessionStatus::Finalized),
            ..StateChange::default()
        });
        *guard = Some(hitl);
        return Ok(Json(session.resource()));
    }
    session.state_change(StateChange {
        status: Some(SessionStatus::Running),
        feedback: Some(req.text.clone()),
        ..StateChange::default()
    });
    let ctx = session.ctx.clone();
    let text = req.text;
    let (hitl, applied) = tokio::task::spawn_blocking(move || {
        let applied = apply_feedback(&mut hitl, &text, &ctx);
        (hitl, applied)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?;
    match applied {
        Ok(()) => {
            session.publish_result(&hitl.result);
            let status = match hitl.state {
                HitlState::AwaitingFeedback => SessionStatus::AwaitingFeedback,
                HitlState::Finalized => SessionStatus::Finalized,
            };
            session.state_change(StateChange {
                status: Some(status),
                ..StateChange::default()
            });
        }
        Err(e) => session.state_change(failure(&e)),
    }
    *guard = Some(hitl);
    Ok(Json(session.resource()))
}

fn is_terminal(event: &SessionEvent) -> bool {
    event.kind == EventKind::StateChange
        && matches!(
            event.data.get("status").and_then(Value::as_str),
            Some("finalized") | Some("error")
        )
}

fn sse_event(event: &SessionEvent) -> SseEvent {
    SseEvent::default()
        .id(event.seq.to_string())
        .event(event.kind.as_str())
        .data(event.data.to_string())
}

/// Events after the client's `Last-Event-ID`, then live ones. The stream
/// ends after a terminal state change.
async fn stream_events(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let session = app.session(&id)?;
    let after: u64 = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0);
    // subscribe before reading the backlog so no wakeup is missed
    let rx = session.tx.subscribe();
    let backlog: Vec<SessionEvent> = session
        .log
        .lock()
        .expect("session log lock")
        .events
        .iter()
        .filter(|e| e.seq > after)
        .cloned()
        .collect();
    let last = backlog.last().map_or(after, |e| e.seq);
    let done = session.ended_by(last);
    // the log is authoritative; the channel only signals that it grew
    let live = stream::unfold(
        (rx, last, done, session),
        |(mut rx, last, done, session)| async move {
            if done {
                return None;
            }
            loop {
                if let Some(event) = session.event(last + 1) {
                    let done = is_terminal(&event);
                    let seq = event.seq;
                    return Some((event, (rx, seq, done, session)));
                }
                match rx.recv().await {
                    Ok(_) | Err(broadcast::error::RecvError::Lagged(_)) => {}
                    Err(broadcast::error::RecvError::Closed) => return None,
                }
            }
        },
    );
    let events = stream::iter(backlog).chain(live).map(|e| Ok(sse_event(&e)));
    Ok(Sse::new(events).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}

impl Session {
    fn event(&self, seq: u64) -> Option<SessionEvent> {
        let log = self.log.lock().expect("session log lock");
        log.events.get((seq as usize).checked_sub(1)?).cloned()
    }

    /// A terminal state change has been published at or before `seq`.
    fn ended_by(&self, seq: u64) -> bool {
        let log = self.log.lock().expect("session log lock");
        log.events.iter().take(seq as usize).any(is_terminal)
    }
}

/// Serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
