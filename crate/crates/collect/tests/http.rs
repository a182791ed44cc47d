mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::*;
use epilogue_collect::server::{router, serve_on, AppState};
use epilogue_collect::{Clock, Event, Outcome, Phase, ServerMessage, StudyStore, SystemClock};
use futures_util::{SinkExt, StreamExt};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;
use tower::ServiceExt;

async fn call(state: &AppState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn state_for(fx: &Fixture) -> AppState {
    let clock: Arc<dyn Clock> = Arc::new(fx.clock.clone());
    AppState::new(Arc::clone(&fx.store), clock)
}

fn draft_json() -> Value {
    serde_json::to_value(sync_draft(Some(30), false)).unwrap()
}

#[tokio::test]
async fn study_lifecycle() {
    let fx = Fixture::new();
    let st = state_for(&fx);
    let (s, created) = call(&st, "POST", "/studies", Some(draft_json())).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(created["state"], "draft");
    let id = created["id"].as_u64().unwrap();

    let mut renamed = draft_json();
    renamed["name"] = json!("second try");
    let (s, body) = call(&st, "PUT", &format!("/studies/{id}"), Some(renamed.clone())).await;
    assert_eq!((s, body["name"].as_str()), (StatusCode::OK, Some("second try")));

    let (s, body) = call(&st, "POST", &format!("/studies/{id}/activate"), None).await;
    assert_eq!((s, body["state"].as_str()), (StatusCode::OK, Some("active")));
    let (s, body) = call(&st, "PUT", &format!("/studies/{id}"), Some(renamed)).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::CONFLICT, Some("STUDY_IMMUTABLE")));

    let (s, list) = call(&st, "GET", "/studies", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);

    let (s, body) = call(&st, "GET", "/studies/99", None).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("UNKNOWN_STUDY")));
    let mut bad = draft_json();
    bad["mode"] = json!({"kind": "async", "frame_rate_hz": 90});
    let (s, body) = call(&st, "POST", "/studies", Some(bad)).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("INVALID_STUDY")));
    let (s, _) = call(&st, "POST", "/studies", Some(json!({"name": 3}))).await;
    assert!(s.is_client_error());

    let (s, body) = call(&st, "POST", &format!("/studies/{id}/archive"), None).await;
    assert_eq!((s, body["state"].as_str()), (StatusCode::OK, Some("archived")));
}

#[tokio::test]
async fn episode_review_tagging_and_export() {
    let fx = Fixture::new();
    let st = state_for(&fx);
    let study = fx.study(sync_draft(None, false));
    let mut rt = fx.runtime(&study, 1);
    let mut mirror = Mirror::new(&study.draft.environments[0], 1);
    let mut sent = frames(&rt.handle(Event::StartEpisode));
    while rt.phase() == Phase::Running {
        sent.extend(frames(&rt.handle(Event::Action(mirror.next()))));
    }
    let id = episode_id(&rt.handle(Event::Save { confirm: true })).unwrap();

    let (s, list) = call(&st, "GET", &format!("/studies/{}/episodes", study.id), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(list[0]["id"].as_u64(), Some(id));
    assert_eq!(list[0]["outcome"], "completed");

    let (s, ep) = call(&st, "GET", &format!("/episodes/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    let rewards: Vec<f64> = serde_json::from_value(ep["rewards"].clone()).unwrap();
    assert_eq!(rewards.len(), sent.len());
    assert_eq!(rewards.iter().sum::<f64>(), 1.0);

    for (j, image, _) in &sent {
        let (s, step) = call(&st, "GET", &format!("/episodes/{id}/steps/{j}"), None).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(step["image"].as_str(), Some(image.as_str()), "step {j}");
        assert_eq!(step["is_first"], json!(*j == 0));
    }
    let n = sent.len();
    let (s, body) = call(&st, "GET", &format!("/episodes/{id}/steps/{n}"), None).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("INDEX_OUT_OF_RANGE")));
    let (s, _) = call(&st, "GET", "/episodes/404/steps/0", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let tag = json!({"scope": "step", "name": "placed", "step": n - 1});
    let (s, entry) = call(&st, "POST", &format!("/episodes/{id}/tags"), Some(tag)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(entry["tags"]["steps"]["placed"], json!([n - 1]));
    let (s, body) = call(&st, "POST", &format!("/episodes/{id}/tags"), Some(json!({"scope": "step", "name": "x"}))).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("INVALID_TAG")));

    let out = fx.dir.path().join("out.rlds");
    let req = json!({"study": study.id, "options": {"strip_images": true}, "out": out});
    let (s, summary) = call(&st, "POST", "/export", Some(req)).await;
    assert_eq!(s, StatusCode::OK, "{summary}");
    assert_eq!(summary["episode_ids"], json!([id]));
    assert!(out.is_file());
    let (s, summary) = call(&st, "POST", "/export", Some(json!({"study": study.id}))).await;
    assert_eq!(s, StatusCode::OK);
    assert!(std::path::Path::new(summary["path"].as_str().unwrap()).is_file());
    let req = json!({"study": study.id, "filter": {"outcomes": ["abandoned"]}});
    let (s, body) = call(&st, "POST", "/export", Some(req)).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::CONFLICT, Some("NO_MATCHING_EPISODES")));
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn start_server() -> (std::net::SocketAddr, Arc<StudyStore>, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(StudyStore::open(dir.path()).unwrap());
    let state = AppState::new(Arc::clone(&store), Arc::new(SystemClock::default()));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve_on(listener, state));
    (addr, store, dir)
}

async fn send(ws: &mut Ws, msg: Value) {
    let mut msg = msg;
    msg["v"] = json!(1);
    ws.send(Message::Text(msg.to_string().into())).await.unwrap();
}

async fn recv(ws: &mut Ws) -> ServerMessage {
    let msg = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.unwrap().unwrap().unwrap();
    ServerMessage::parse(msg.to_text().unwrap()).unwrap()
}

/// Reads until a `state` message arrives, returning everything seen.
async fn recv_until_state(ws: &mut Ws) -> Vec<ServerMessage> {
    let mut seen = Vec::new();
    loop {
        let m = recv(ws).await;
        let done = matches!(m, ServerMessage::State { .. } | ServerMessage::Error { .. });
        seen.push(m);
        if done {
            return seen;
        }
    }
}

#[tokio::test]
async fn websocket_sync_session_end_to_end() {
    let (addr, store, _dir) = start_server().await;
    let study = store.create_study(sync_draft(None, false)).unwrap();
    store.set_state(study.id, epilogue_collect::StudyState::Active).unwrap();
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();

    send(&mut ws, json!({"type": "start_session", "study": study.id, "user": "ws-user"})).await;
    let ServerMessage::State { phase, session, .. } = recv(&mut ws).await else {
        panic!("expected state");
    };
    assert_eq!(phase, Phase::Idle);
    let mut mirror = Mirror::new(&study.draft.environments[0], session);

    send(&mut ws, json!({"type": "start_episode"})).await;
    let first = recv_until_state(&mut ws).await;
    assert_eq!(frames(&first).len(), 1);
    let mut steps = 0;
    loop {
        send(&mut ws, json!({"type": "action", "value": mirror.next()})).await;
        let ServerMessage::Frame { reward, .. } = recv(&mut ws).await else {
            panic!("expected frame");
        };
        steps += 1;
        if reward == 1.0 {
            break;
        }
    }
    let ServerMessage::EpisodeEnd { steps: reported } = recv(&mut ws).await else {
        panic!("expected episode_end");
    };
    assert_eq!(reported, steps);
    assert_eq!(last_phase(&[recv(&mut ws).await]), Some(Phase::AwaitingSave));

    send(&mut ws, json!({"type": "save", "confirm": true})).await;
    let out = recv_until_state(&mut ws).await;
    let id = episode_id(&out).unwrap();
    send(&mut ws, json!({"type": "tag", "scope": "episode", "name": "clean"})).await;
    assert_eq!(episode_id(&recv_until_state(&mut ws).await), Some(id));
    send(&mut ws, json!({"type": "teleport"})).await;
    assert_eq!(error_code(&[recv(&mut ws).await]).as_deref(), Some("BAD_MESSAGE"));
    send(&mut ws, json!({"type": "end_session"})).await;
    assert_eq!(last_phase(&recv_until_state(&mut ws).await), Some(Phase::Ended));

    let entry = store.entry(id).unwrap();
    assert_eq!((entry.outcome, entry.steps, entry.user_id.as_str()), (Outcome::Completed, steps + 1, "ws-user"));
    assert_eq!(entry.tags.episode.len(), 1);
}

#[tokio::test]
async fn websocket_async_session_streams_frames() {
    let (addr, store, _dir) = start_server().await;
    let study = store.create_study(async_draft(40)).unwrap();
    store.set_state(study.id, epilogue_collect::StudyState::Active).unwrap();
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    send(&mut ws, json!({"type": "start_session", "study": study.id})).await;
    recv(&mut ws).await;
    send(&mut ws, json!({"type": "start_episode"})).await;
    recv_until_state(&mut ws).await;
    let mut last = 0;
    for _ in 0..8 {
        match recv(&mut ws).await {
            ServerMessage::Frame { step, .. } => {
                assert_eq!(step, last + 1);
                last = step;
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    send(&mut ws, json!({"type": "cancel"})).await;
    let out = recv_until_state(&mut ws).await;
    let id = episode_id(&out).unwrap();
    let entry = store.entry(id).unwrap();
    assert_eq!(entry.outcome, Outcome::Canceled);
    assert!(entry.steps >= 9);
}

#[tokio::test]
async fn dropped_socket_leaves_a_resumable_session() {
    let (addr, store, _dir) = start_server().await;
    let study = store.create_study(sync_draft(None, false)).unwrap();
    store.set_state(study.id, epilogue_collect::StudyState::Active).unwrap();
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    send(&mut ws, json!({"type": "start_session", "study": study.id, "user": "u"})).await;
    let ServerMessage::State { session, .. } = recv(&mut ws).await else { panic!() };
    send(&mut ws, json!({"type": "start_episode"})).await;
    recv_until_state(&mut ws).await;
    drop(ws);

    let mut phase = None;
    for _ in 0..50 {
        tokio::time::sleep(Duration::from_millis(20)).await;
        let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
        send(&mut ws, json!({"type": "start_session", "study": study.id, "user": "u", "session": session})).await;
        if let ServerMessage::State { phase: p, .. } = recv(&mut ws).await {
            phase = Some(p);
            break;
        }
    }
    assert_eq!(phase, Some(Phase::Paused));
}
