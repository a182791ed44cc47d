//! HTTP and WebSocket front end.
//!
//! | Route | |
//! |---|---|
//! | `GET /studies` | list studies |
//! | `POST /studies` | create a draft from a study document |
//! | `PUT /studies/{id}` | replace a draft's configuration |
//! | `POST /studies/{id}/activate` | open a study for sessions |
//! | `POST /studies/{id}/archive` | close a study |
//! | `GET /studies/{id}/episodes` | episode index |
//! | `GET /episodes/{id}` | index entry plus per-step rewards |
//! | `GET /episodes/{id}/steps/{j}` | one step with its recorded frame |
//! | `POST /episodes/{id}/tags` | set a tag |
//! | `POST /export` | write selected episodes to a record file |
//! | `GET /ws` | session protocol |

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use epilogue::model::{tree_to_json, TensorTree};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::clock::{Clock, SystemClock};
use crate::frame::encode_frame;
use crate::hub::Hub;
use crate::protocol::{ServerMessage, TagScopeName};
use crate::store::{EpisodeEntry, ExportFilter, ExportOptions, ExportSummary, StudyStore, TagScope, TagValue};
use crate::study::{Study, StudyDraft, StudyState, IMAGE_KEY};
use crate::CollectError;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<StudyStore>,
    pub hub: Arc<Hub>,
}

impl AppState {
    pub fn new(store: Arc<StudyStore>, clock: Arc<dyn Clock>) -> AppState {
        let hub = Hub::new(Arc::clone(&store), clock);
        AppState { store, hub }
    }

    /// Opens the store at `root` with the system clock.
    pub fn open(root: impl Into<PathBuf>) -> crate::Result<AppState> {
        let store = Arc::new(StudyStore::open(root)?);
        Ok(AppState::new(store, Arc::new(SystemClock::default())))
    }
}

pub struct ApiError(CollectError);

impl From<CollectError> for ApiError {
    fn from(e: CollectError) -> Self {
        ApiError(e)
    }
}

pub fn status_of(e: &CollectError) -> StatusCode {
    match e {
        CollectError::UnknownStudy(_)
        | CollectError::UnknownSession(_)
        | CollectError::UnknownEpisode(_)
        | CollectError::IndexOutOfRange { .. } => StatusCode::NOT_FOUND,
        CollectError::StudyImmutable(_) | CollectError::StudyNotActive(_) | CollectError::NoMatchingEpisodes => {
            StatusCode::CONFLICT
        }
        CollectError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"code": self.0.code(), "message": self.0.to_string()});
        (status_of(&self.0), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/studies", get(list_studies).post(create_study))
        .route("/studies/{id}", get(get_study).put(update_study))
        .route("/studies/{id}/activate", post(activate))
        .route("/studies/{id}/archive", post(archive))
        .route("/studies/{id}/episodes", get(list_episodes))
        .route("/episodes/{id}", get(get_episode))
        .route("/episodes/{id}/steps/{j}", get(get_step))
        .route("/episodes/{id}/tags", post(post_tag))
        .route("/export", post(export))
        .route("/ws", get(ws_upgrade))
        .with_state(state)
}

/// Serves on `addr` until the task is dropped, reaping detached sessions
/// once a second.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_on(listener, state).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    let hub = Arc::clone(&state.hub);
    let reaper = tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(1));
        loop {
            tick.tick().await;
            hub.reap();
        }
    });
    let result = axum::serve(listener, router(state)).await;
    reaper.abort();
    result
}

async fn list_studies(State(s): State<AppState>) -> Json<Vec<Study>> {
    Json(s.store.studies())
}

async fn create_study(State(s): State<AppState>, Json(draft): Json<StudyDraft>) -> Result<(StatusCode, Json<Study>), ApiError> {
    Ok((StatusCode::CREATED, Json(s.store.create_study(draft)?)))
}

async fn get_study(State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<Study> {
    Ok(Json(s.store.study(id)?))
}

async fn update_study(State(s): State<AppState>, Path(id): Path<u64>, Json(draft): Json<StudyDraft>) -> ApiResult<Study> {
    Ok(Json(s.store.update_study(id, draft)?))
}

async fn activate(State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<Study> {
    Ok(Json(s.store.set_state(id, StudyState::Active)?))
}

async fn archive(State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<Study> {
    Ok(Json(s.store.set_state(id, StudyState::Archived)?))
}

async fn list_episodes(State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<Vec<EpisodeEntry>> {
    Ok(Json(s.store.episodes(id)?))
}

#[derive(Serialize)]
struct EpisodeView {
    #[serde(flatten)]
    entry: EpisodeEntry,
    rewards: Vec<f64>,
}

async fn get_episode(State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<EpisodeView> {
    let entry = s.store.entry(id)?;
    let rewards = s.store.reward_profile(id)?;
    Ok(Json(EpisodeView { entry, rewards }))
}

async fn get_step(State(s): State<AppState>, Path((id, j)): Path<(u64, u64)>) -> ApiResult<Value> {
    let step = s.store.read_step(id, j)?;
    let image = match step.metadata.get(IMAGE_KEY) {
        Some(TensorTree::Leaf(t)) => Value::String(encode_frame(t)?),
        _ => Value::Null,
    };
    Ok(Json(json!({
        "episode_id": id,
        "step": j,
        "is_first": step.is_first,
        "is_last": step.is_last,
        "is_terminal": step.is_terminal,
        "observation": tree_to_json(&step.observation),
        "action": tree_to_json(&step.action),
        "reward": tree_to_json(&step.reward),
        "discount": tree_to_json(&step.discount),
        "image": image,
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TagRequest {
    scope: TagScopeName,
    name: String,
    #[serde(default)]
    step: Option<u64>,
    #[serde(default)]
    value: Option<TagValue>,
}

async fn post_tag(State(s): State<AppState>, Path(id): Path<u64>, Json(req): Json<TagRequest>) -> ApiResult<EpisodeEntry> {
    let scope = match (req.scope, req.step) {
        (TagScopeName::Episode, None) => TagScope::Episode,
        (TagScopeName::Step, Some(j)) => TagScope::Step(j),
        _ => return Err(CollectError::InvalidTag("step is required for step tags only".into()).into()),
    };
    let value = req.value.unwrap_or(TagValue::Bool(true));
    Ok(Json(s.store.tag(id, scope, &req.name, value)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportRequest {
    study: u64,
    #[serde(default)]
    filter: ExportFilter,
    #[serde(default)]
    options: ExportOptions,
    /// Destination on the server; defaults to `<root>/exports/`.
    #[serde(default)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ExportView {
    path: PathBuf,
    #[serde(flatten)]
    summary: ExportSummary,
}

async fn export(State(s): State<AppState>, Json(req): Json<ExportRequest>) -> ApiResult<ExportView> {
    let path = match req.out {
        Some(p) => p,
        None => {
            let dir = s.store.root().join("exports");
            std::fs::create_dir_all(&dir).map_err(|e| CollectError::io(&dir, e))?;
            let n = std::fs::read_dir(&dir).map(|d| d.count()).unwrap_or(0);
            dir.join(format!("study-{}-{n}.rlds", req.study))
        }
    };
    let summary = s.store.export(req.study, &req.filter, &req.options, &path)?;
    Ok(Json(ExportView { path, summary }))
}

async fn ws_upgrade(State(s): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| ws_loop(socket, s.hub))
}

async fn send_all(socket: &mut WebSocket, out: Vec<ServerMessage>) -> bool {
    for msg in out {
        if socket.send(Message::Text(msg.to_text().into())).await.is_err() {
            return false;
        }
    }
    true
}

async fn ws_loop(mut socket: WebSocket, hub: Arc<Hub>) {
    let mut conn = hub.connect();
    loop {
        let wait = conn
            .next_wakeup()
            .map(|at| at.saturating_sub(hub.clock().now()))
            .unwrap_or(Duration::from_secs(3600));
        let out = tokio::select! {
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => conn.handle_text(text.as_str()),
                Some(Ok(Message::Binary(_))) => vec![ServerMessage::error(&CollectError::BadMessage("binary frames are not supported".into()))],
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => continue,
            },
            _ = tokio::time::sleep(wait) => conn.poll(),
        };
        if !send_all(&mut socket, out).await {
            break;
        }
    }
    conn.disconnect();
}
