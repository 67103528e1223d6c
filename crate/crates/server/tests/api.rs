use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sparkle_core::config::load_config;
use sparkle_core::llm::{Backend, BackendError, CompletionRequest, ScriptedBackend};
use sparkle_core::{LogRecord, Provider, RunOptions, RunStatus, Script, Simulation};
use sparkle_server::{router, Session};
use tower::ServiceExt;

const CONFIG: &str = include_str!("../../cli/examples/football.json");
const SCRIPT: &str = include_str!("../../cli/examples/football.script.json");

/// Scripted responses with a little latency, so a run is still going when
/// the test reaches for the pause button.
struct Slow(ScriptedBackend);

impl Backend for Slow {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        std::thread::sleep(Duration::from_millis(3));
        self.0.complete(request)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        self.0.embed(text)
    }
}

fn session() -> Arc<Session> {
    session_with(Provider::scripted(Script::from_json(SCRIPT).unwrap()))
}

fn slow_session() -> Arc<Session> {
    session_with(Provider::new(Box::new(Slow(ScriptedBackend::new(Script::from_json(SCRIPT).unwrap())))))
}

fn session_with(provider: Provider) -> Arc<Session> {
    let provider = Arc::new(provider);
    let sim = Simulation::new(load_config(CONFIG).unwrap(), RunOptions::default(), provider).unwrap();
    Session::new(sim)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

fn wait_finished(s: &Session) {
    s.wait_until(|sim| sim.state().status == RunStatus::Finished);
}

#[tokio::test]
async fn config_crud_and_guards() {
    let s = session();
    let app = router(s.clone());
    let (st, v) = call(&app, "GET", "/v1/health", None).await;
    assert_eq!((st, v["status"].as_str()), (StatusCode::OK, Some("ok")));

    let agent = json!({
        "agent_id": "zoe",
        "name": "Zoe",
        "innate": "curious and a little shy; loves birdwatching at dawn"
    });
    let (st, v) = call(&app, "POST", "/v1/agents", Some(agent)).await;
    assert_eq!(st, StatusCode::OK);
    assert!(v["report"]["violations"].as_array().unwrap().is_empty());
    let (_, v) = call(&app, "GET", "/v1/agents/zoe", None).await;
    assert_eq!(v["innate"], "curious and a little shy; loves birdwatching at dawn");

    let (st, v) = call(&app, "POST", "/v1/agents", Some(json!({"agent_id": "", "name": "x"}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"]["report"]["violations"].is_array());

    let (st, _) = call(&app, "PUT", "/v1/agents/zoe", Some(json!({"agent_id": "other", "name": "x"}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);

    let event = json!({
        "event_id": "rain",
        "event_time": "2026-07-14T08:00:00-12:00",
        "description": "It starts raining.",
        "audience": {"agent": "zoe"}
    });
    let (st, _) = call(&app, "POST", "/v1/events", Some(event)).await;
    assert_eq!(st, StatusCode::OK);
    let (st, _) = call(&app, "DELETE", "/v1/events/rain", None).await;
    assert_eq!(st, StatusCode::OK);
    let (st, _) = call(&app, "GET", "/v1/events/rain", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);

    let (st, v) = call(&app, "POST", "/v1/run/start", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["status"], "Running");
    let (st, v) = call(&app, "POST", "/v1/run/start", None).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(v["error"]["code"], "STATE_ERROR");

    let config: Value = serde_json::from_str(CONFIG).unwrap();
    let (st, _) = call(&app, "PUT", "/v1/config", Some(config)).await;
    assert_eq!(st, StatusCode::CONFLICT);
    s.shutdown();
}

#[tokio::test]
async fn run_control_round_trip() {
    let s = slow_session();
    let app = router(s.clone());
    call(&app, "POST", "/v1/run/start", None).await;
    let (st, v) = call(&app, "POST", "/v1/run/pause", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["status"], "Paused");
    // Paused between ticks: the log ends on a commit (or the initial record).
    let last = s.read(|sim| sim.log().last().unwrap().record.clone());
    assert!(matches!(last, LogRecord::TickCommit { .. } | LogRecord::ConfigChange(_)));
    assert!(v["current_tick"].as_u64().unwrap() < 18);

    let future = json!({
        "event_id": "late",
        "event_time": "2026-07-14T23:30:00-12:00",
        "description": "Fireworks light up the sky."
    });
    let (st, _) = call(&app, "POST", "/v1/events", Some(future)).await;
    assert_eq!(st, StatusCode::OK);
    let past = json!({
        "event_id": "early",
        "event_time": "2026-07-14T05:00:00-12:00",
        "description": "Too early."
    });
    let (st, v) = call(&app, "POST", "/v1/events", Some(past)).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "TIME_PAST_ERROR");

    let (_, v) = call(&app, "POST", "/v1/run/resume", None).await;
    assert_eq!(v["status"], "Running");
    wait_finished(&s);

    let (_, v) = call(&app, "GET", "/v1/run", None).await;
    assert_eq!(v["status"], "Finished");
    let first = v["run_id"].as_str().unwrap().to_string();
    let (st, v) = call(&app, "POST", "/v1/run/reset", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["archived_run_id"], first.as_str());
    assert_ne!(v["run_id"], first.as_str());
    assert_eq!(v["status"], "Idle");
    let (_, v) = call(&app, "POST", "/v1/run/resume", None).await;
    assert_eq!(v["error"]["code"], "STATE_ERROR");
    s.shutdown();
}

#[tokio::test]
async fn queries_are_views_over_the_log() {
    let s = session();
    let app = router(s.clone());
    let (_, v) = call(&app, "GET", "/v1/network?at_tick=0", None).await;
    assert_eq!(v["edges"], json!([]));
    call(&app, "POST", "/v1/run/start", None).await;
    wait_finished(&s);

    let (_, all) = call(&app, "GET", "/v1/calendar", None).await;
    let (_, high) = call(&app, "GET", "/v1/calendar?min_importance=8", None).await;
    let count = |v: &Value| -> u64 { v["buckets"].as_array().unwrap().iter().map(|b| b["count"].as_u64().unwrap()).sum() };
    assert!(count(&high) < count(&all));
    let behaviors = s.read(|sim| sparkle_core::views::behaviors(sim.log()).len()) as u64;
    assert_eq!(count(&all), behaviors);
    for b in high["buckets"].as_array().unwrap() {
        for e in b["entries"].as_array().unwrap() {
            assert!(e["record"]["importance"].as_u64().unwrap() >= 8);
        }
    }
    let (st, v) = call(&app, "GET", "/v1/calendar?min_importance=11", None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "BAD_REQUEST");
    let (st, _) = call(&app, "GET", "/v1/calendar?kinds=dance", None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);

    let (_, page) = call(&app, "GET", "/v1/sparks?limit=2", None).await;
    let items = page["items"].as_array().unwrap();
    assert_eq!(items.len(), 2);
    let cursor = page["next_cursor"].as_u64().unwrap();
    let (_, next) = call(&app, "GET", &format!("/v1/sparks?limit=2&cursor={cursor}"), None).await;
    assert_ne!(next["items"][0]["spark_id"], items[0]["spark_id"]);
    let id = items[0]["spark_id"].as_str().unwrap();
    let (st, detail) = call(&app, "GET", &format!("/v1/sparks/{id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(detail["like_count"].as_u64().unwrap() as usize, detail["likes"].as_array().unwrap().len());
    let (st, hidden) = call(&app, "GET", &format!("/v1/sparks/{id}/hidden"), None).await;
    assert_eq!(st, StatusCode::OK);
    for t in hidden["declined"].as_array().unwrap() {
        assert_eq!(t["polarity"], "declined");
        assert_eq!(t["target"], id);
    }
    let (st, _) = call(&app, "GET", "/v1/sparks/nope", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);

    let (_, posts) = call(&app, "GET", "/v1/behaviors?limit=1000", None).await;
    let post = posts["items"]
        .as_array()
        .unwrap()
        .iter()
        .find(|b| b["kind"] == "post")
        .unwrap()
        .clone();
    let (st, trace) = call(&app, "GET", &format!("/v1/reasoning/{}", post["record_id"].as_str().unwrap()), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(trace["polarity"], "acted");

    let (st, _) = call(&app, "GET", "/v1/network?at_tick=999", None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (_, net) = call(&app, "GET", "/v1/network", None).await;
    assert!(!net["edges"].as_array().unwrap().is_empty());

    let (st, a) = call(&app, "GET", "/v1/export/behaviors", None).await;
    assert_eq!(st, StatusCode::OK);
    let (_, b) = call(&app, "GET", "/v1/export/behaviors", None).await;
    assert_eq!(a, b);
    assert_eq!(a.as_str().unwrap().lines().count() as u64, behaviors);
    let (st, _) = call(&app, "GET", "/v1/export/everything", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    s.shutdown();
}

async fn collect_stream(app: &Router, uri: &str, last_event_id: Option<u64>) -> Vec<(Option<u64>, String, String)> {
    let mut req = Request::builder().uri(uri);
    if let Some(id) = last_event_id {
        req = req.header("last-event-id", id.to_string());
    }
    let resp = app.clone().oneshot(req.body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();
    let mut text = String::new();
    // The stream never ends on its own; read until the final commit arrives.
    loop {
        let frame = tokio::time::timeout(Duration::from_secs(2), body.frame()).await;
        match frame {
            Ok(Some(Ok(f))) => {
                if let Some(d) = f.data_ref() {
                    text.push_str(&String::from_utf8_lossy(d));
                }
            }
            _ => break,
        }
    }
    text.split("\n\n")
        .filter(|chunk| !chunk.trim().is_empty() && !chunk.starts_with(':'))
        .map(|chunk| {
            let mut id = None;
            let mut event = String::new();
            let mut data = String::new();
            for line in chunk.lines() {
                if let Some(v) = line.strip_prefix("id: ") {
                    id = v.parse().ok();
                } else if let Some(v) = line.strip_prefix("event: ") {
                    event = v.to_string();
                } else if let Some(v) = line.strip_prefix("data: ") {
                    data.push_str(v);
                }
            }
            (id, event, data)
        })
        .collect()
}

#[tokio::test]
async fn stream_replays_in_order_and_resumes() {
    let s = session();
    let app = router(s.clone());
    call(&app, "POST", "/v1/run/start", None).await;
    wait_finished(&s);

    let a = collect_stream(&app, "/v1/stream?from=0", None).await;
    let b = collect_stream(&app, "/v1/stream", None).await;
    let ids = |v: &[(Option<u64>, String, String)]| v.iter().filter_map(|e| e.0).collect::<Vec<_>>();
    assert_eq!(ids(&a), ids(&b));
    let seqs = ids(&a);
    assert!(!seqs.is_empty());
    assert!(seqs.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(a[0].1, "run_state_changed");
    let log = s.read(|sim| sim.log().to_vec());
    for (id, event, data) in a.iter().filter(|e| e.0.is_some()) {
        let entry = &log[id.unwrap() as usize];
        assert_eq!(event, entry.record.type_name());
        assert_eq!(data, &entry.to_line());
    }

    let mid = seqs[seqs.len() / 2];
    let resumed = collect_stream(&app, "/v1/stream", Some(mid)).await;
    let tail: Vec<u64> = seqs.iter().copied().filter(|&x| x > mid).collect();
    assert_eq!(ids(&resumed), tail);
    s.shutdown();
}
