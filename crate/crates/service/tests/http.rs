use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use realign::diagnosis::Verdict;
use realign::episode::{run_episode, run_to_completion, Episode};
use realign::kinematics::{jacobian, Point};
use realign::report::{Event, EventKind};
use realign::scenario::Scenario;
use realign::session::{Session, SessionMode, SessionParams};
use realign_service::server::{router, Corrected, Created, EventPage, ServerConfig, Stepped};
use serde_json::{json, Value};
use tower::ServiceExt;

fn scenario(name: &str) -> Scenario {
    let path = format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    Scenario::load(path).unwrap()
}

fn app() -> Router {
    router(&ServerConfig::default())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn create(app: &Router, name: &str, mode: SessionMode) -> Created {
    let body = json!({ "scenario": scenario(name), "params": { "mode": mode } });
    let (status, bytes) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&bytes));
    serde_json::from_slice(&bytes).unwrap()
}

async fn step_until_done(app: &Router, id: u64) -> Vec<Event> {
    let mut events = Vec::new();
    for _ in 0..200 {
        let (status, bytes) = call(app, "POST", &format!("/sessions/{id}/step"), None).await;
        assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&bytes));
        let stepped: Stepped = serde_json::from_slice(&bytes).unwrap();
        events.extend(stepped.events);
        if stepped.snapshot.phase.is_done() {
            return events;
        }
    }
    panic!("session did not finish");
}

#[tokio::test]
async fn fresh_session_starts_planning_with_initial_weights() {
    let app = app();
    let created = create(&app, "laptop_moved", SessionMode::Oracle).await;
    assert_eq!(created.snapshot.phase.name(), "planning");
    assert_eq!(created.snapshot.weights, scenario("laptop_moved").initial_weights);
    assert!(created.snapshot.trajectory.is_none());
}

#[tokio::test]
async fn get_state_is_side_effect_free() {
    let app = app();
    let id = create(&app, "laptop_moved", SessionMode::Oracle).await.id;
    call(&app, "POST", &format!("/sessions/{id}/step"), None).await;
    let (_, a) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    let (_, b) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn unknown_session_is_not_found() {
    let (status, _) = call(&app(), "GET", "/sessions/999/state", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_scenario_is_rejected() {
    let mut body = json!({ "scenario": scenario("aligned") });
    body["scenario"]["bogus"] = json!(1);
    let (status, _) = call(&app(), "POST", "/sessions", Some(body)).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn drag_outside_awaiting_input_conflicts() {
    let app = app();
    let id = create(&app, "laptop_moved", SessionMode::Live).await.id;
    let drag = json!({ "waypoint_index": 5, "drag": [0.1, 0.0] });
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/correction"), Some(drag)).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn endpoint_drag_is_unprocessable() {
    let app = app();
    let id = create(&app, "laptop_moved", SessionMode::Live).await.id;
    call(&app, "POST", &format!("/sessions/{id}/step"), None).await;
    let drag = json!({ "waypoint_index": 0, "drag": [0.1, 0.0] });
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/correction"), Some(drag)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn zero_drag_leaves_state_unchanged() {
    let app = app();
    let id = create(&app, "laptop_moved", SessionMode::Live).await.id;
    call(&app, "POST", &format!("/sessions/{id}/step"), None).await;
    let (_, before) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    let drag = json!({ "waypoint_index": 5, "drag": [0.0, 0.0] });
    let (status, bytes) = call(&app, "POST", &format!("/sessions/{id}/correction"), Some(drag)).await;
    assert_eq!(status, StatusCode::OK);
    let corrected: Corrected = serde_json::from_slice(&bytes).unwrap();
    assert!(!corrected.outcome.accepted);
    assert!(corrected.events.is_empty());
    let (_, after) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(before, after);
}

#[tokio::test]
async fn oracle_session_matches_cli_report() {
    for name in ["aligned", "laptop_moved"] {
        let app = app();
        let id = create(&app, name, SessionMode::Oracle).await.id;
        let events = step_until_done(&app, id).await;
        let report = run_episode(&scenario(name)).unwrap();
        assert_eq!(
            serde_json::to_string(&events).unwrap(),
            serde_json::to_string(&report.events).unwrap(),
            "{name}"
        );
    }
}

#[tokio::test]
async fn event_polling_resumes_from_cursor() {
    let app = app();
    let id = create(&app, "laptop_moved", SessionMode::Oracle).await.id;
    let all = step_until_done(&app, id).await;
    let (_, bytes) = call(&app, "GET", &format!("/sessions/{id}/events?since=2"), None).await;
    let page: EventPage = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(page.cursor, all.len());
    assert_eq!(page.events, all[2..]);
    let (_, bytes) = call(&app, "GET", &format!("/sessions/{id}/events?since={}", all.len()), None).await;
    let page: EventPage = serde_json::from_slice(&bytes).unwrap();
    assert!(page.events.is_empty());
}

#[tokio::test]
async fn static_mount_serves_the_bundle() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>ui</h1>").unwrap();
    let app = router(&ServerConfig {
        static_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    });
    let (status, bytes) = call(&app, "GET", "/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, b"<h1>ui</h1>");
}

/// A workspace drag whose Jacobian-transpose torque is the closest one to the
/// oracle's torque reproduces the scripted diagnosis.
#[tokio::test]
async fn scripted_drag_reproduces_oracle_diagnosis() {
    let s = scenario("laptop_moved");
    let mut scripted = Episode::new(s.clone()).unwrap();
    scripted.advance().unwrap();
    scripted.oracle_step().unwrap();
    let (waypoint, torque) = scripted
        .events()
        .iter()
        .find_map(|e| match &e.kind {
            EventKind::Correction { waypoint, torque, .. } => Some((*waypoint, torque.clone())),
            _ => None,
        })
        .unwrap();
    run_to_completion(&mut scripted).unwrap();

    let app = app();
    let id = create(&app, "laptop_moved", SessionMode::Live).await.id;
    let (_, bytes) = call(&app, "POST", &format!("/sessions/{id}/step"), None).await;
    let stepped: Stepped = serde_json::from_slice(&bytes).unwrap();
    let q = &stepped.snapshot.trajectory.unwrap().waypoints[waypoint];
    let j = jacobian(&s.arm, q).unwrap();
    let u = nalgebra::DVector::from_vec(torque);
    let drag: Point = (&j * j.transpose()).try_inverse().unwrap() * (&j * u);
    let body = json!({ "waypoint_index": waypoint, "drag": drag });
    let (status, bytes) = call(&app, "POST", &format!("/sessions/{id}/correction"), Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&bytes));
    let mut events = serde_json::from_slice::<Corrected>(&bytes).unwrap().events;
    events.extend(step_until_done(&app, id).await);

    let verdicts = |events: &[Event]| {
        events
            .iter()
            .find_map(|e| match &e.kind {
                EventKind::Diagnosis(d) => Some(
                    ["distance_to_laptop", "distance_to_vase"]
                        .map(|f| d.verdict(f).unwrap()),
                ),
                _ => None,
            })
            .unwrap()
    };
    assert_eq!(verdicts(&events), [Verdict::ShiftedWithObject, Verdict::Unrelated]);
    assert_eq!(verdicts(&events), verdicts(scripted.events()));

    // Replaying the log on a fresh session lands on the same snapshot.
    let (_, bytes) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    let live: realign::session::Snapshot = serde_json::from_slice(&bytes).unwrap();
    let (_, bytes) = call(&app, "GET", &format!("/sessions/{id}/events"), None).await;
    let log: EventPage = serde_json::from_slice(&bytes).unwrap();
    let params = SessionParams {
        mode: SessionMode::Live,
        ..Default::default()
    };
    let replayed = Session::replay(s, params, &log.events).unwrap();
    assert_eq!(
        serde_json::to_string(&replayed.snapshot()).unwrap(),
        serde_json::to_string(&live).unwrap()
    );
}

#[tokio::test]
async fn websocket_streams_the_same_events() {
    use futures_util::StreamExt;

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app()).await.unwrap() });

    let client = reqwest::Client::new();
    let created: Created = client
        .post(format!("http://{addr}/sessions"))
        .json(&json!({ "scenario": scenario("laptop_moved") }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let id = created.id;
    // One step before connecting exercises the backlog path.
    client.post(format!("http://{addr}/sessions/{id}/step")).send().await.unwrap();
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/{id}/stream"))
        .await
        .unwrap();
    loop {
        let stepped: Stepped = client
            .post(format!("http://{addr}/sessions/{id}/step"))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        if stepped.snapshot.phase.is_done() {
            break;
        }
    }
    let page: EventPage = client
        .get(format!("http://{addr}/sessions/{id}/events"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let mut streamed = Vec::new();
    while streamed.len() < page.events.len() {
        let msg = tokio::time::timeout(std::time::Duration::from_secs(10), ws.next())
            .await
            .expect("stream stalled")
            .unwrap()
            .unwrap();
        if let tokio_tungstenite::tungstenite::Message::Text(t) = msg {
            streamed.push(serde_json::from_str::<Event>(&t).unwrap());
        }
    }
    assert_eq!(streamed, page.events);
}
