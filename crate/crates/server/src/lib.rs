//! HTTP control plane under `/v1`, plus a server-sent event stream of the
//! run log.
//!
//! Every query is answered from the committed log; mutations go through the
//! [`Session`], which serializes them with the tick driver.

mod error;
mod session;
mod stream;

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sparkle_core::config::load_config;
use sparkle_core::engine::EngineError;
use sparkle_core::views::{self, CalendarQuery, ExportKind};
use sparkle_core::{
    AgentProfile, BehaviorKind, ConfigBundle, EventSpec, NpcProfile, RunState, Simulation, SimulationConfig,
};

pub use error::ApiError;
pub use session::{Progress, Session};

type ApiResult<T> = Result<T, ApiError>;

pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/config", get(get_config).put(put_config))
        .route("/v1/config/simulation", get(get_simulation).put(put_simulation))
        .route("/v1/agents", get(list_agents).post(post_agent))
        .route("/v1/agents/{id}", get(get_agent).put(put_agent).delete(delete_entity))
        .route("/v1/npcs", get(list_npcs).post(post_npc))
        .route("/v1/npcs/{id}", get(get_npc).put(put_npc).delete(delete_entity))
        .route("/v1/events", get(list_events).post(post_event))
        .route("/v1/events/{id}", get(get_event).delete(delete_entity))
        .route("/v1/run", get(get_run))
        .route("/v1/run/{op}", post(run_op))
        .route("/v1/calendar", get(calendar))
        .route("/v1/sparks", get(sparks))
        .route("/v1/sparks/{id}", get(spark))
        .route("/v1/sparks/{id}/hidden", get(hidden))
        .route("/v1/reasoning/{id}", get(reasoning))
        .route("/v1/network", get(network))
        .route("/v1/behaviors", get(behaviors))
        .route("/v1/traces", get(traces))
        .route("/v1/export/{what}", get(export))
        .route("/v1/stream", get(stream::stream))
        .with_state(session)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, session: Arc<Session>) -> std::io::Result<()> {
    axum::serve(listener, router(session)).await
}

type S = State<Arc<Session>>;

fn parse_body<T: DeserializeOwned>(body: &str) -> ApiResult<T> {
    serde_json::from_str(body).map_err(|e| ApiError::unprocessable(e.to_string()))
}

/// Runs a command off the async executor; commands may wait for a tick.
async fn command<T, F>(session: Arc<Session>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Simulation) -> Result<T, EngineError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || session.control(f))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))?
        .map_err(ApiError::from)
}

fn mutation(config: &ConfigBundle) -> Json<Value> {
    Json(json!({"config": config, "report": config.validate()}))
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn get_config(State(s): S) -> Json<ConfigBundle> {
    Json(s.read(|sim| sim.config().clone()))
}

async fn put_config(State(s): S, body: String) -> ApiResult<Json<Value>> {
    let config = load_config(&body)?;
    command(s, move |sim| sim.replace_config(config).map(mutation)).await
}

async fn get_simulation(State(s): S) -> Json<SimulationConfig> {
    Json(s.read(|sim| sim.config().simulation.clone()))
}

async fn put_simulation(State(s): S, body: String) -> ApiResult<Json<Value>> {
    let simulation: SimulationConfig = parse_body(&body)?;
    command(s, move |sim| sim.replace_simulation(simulation).map(mutation)).await
}

async fn list_agents(State(s): S) -> Json<Vec<AgentProfile>> {
    Json(s.read(|sim| sim.config().agents.clone()))
}

async fn get_agent(State(s): S, Path(id): Path<String>) -> ApiResult<Json<AgentProfile>> {
    s.read(|sim| sim.config().agent(&id).cloned())
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", format!("agent {id}")))
}

async fn post_agent(State(s): S, body: String) -> ApiResult<Json<Value>> {
    let agent: AgentProfile = parse_body(&body)?;
    command(s, move |sim| sim.upsert_agent(agent).map(mutation)).await
}

fn path_matches(path: &str, body: &str) -> ApiResult<()> {
    if path == body {
        Ok(())
    } else {
        Err(ApiError::unprocessable(format!("id {body:?} in body does not match {path:?} in path")))
    }
}

async fn put_agent(State(s): S, Path(id): Path<String>, body: String) -> ApiResult<Json<Value>> {
    let agent: AgentProfile = parse_body(&body)?;
    path_matches(&id, &agent.agent_id)?;
    command(s, move |sim| sim.upsert_agent(agent).map(mutation)).await
}

async fn list_npcs(State(s): S) -> Json<Vec<NpcProfile>> {
    Json(s.read(|sim| sim.config().npcs.clone()))
}

async fn get_npc(State(s): S, Path(id): Path<String>) -> ApiResult<Json<NpcProfile>> {
    s.read(|sim| sim.config().npc(&id).cloned())
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", format!("npc {id}")))
}

async fn post_npc(State(s): S, body: String) -> ApiResult<Json<Value>> {
    let npc: NpcProfile = parse_body(&body)?;
    command(s, move |sim| sim.upsert_npc(npc).map(mutation)).await
}

async fn put_npc(State(s): S, Path(id): Path<String>, body: String) -> ApiResult<Json<Value>> {
    let npc: NpcProfile = parse_body(&body)?;
    path_matches(&id, &npc.npc_id)?;
    command(s, move |sim| sim.upsert_npc(npc).map(mutation)).await
}

async fn list_events(State(s): S) -> Json<Vec<EventSpec>> {
    Json(s.read(|sim| sim.config().events.clone()))
}

async fn get_event(State(s): S, Path(id): Path<String>) -> ApiResult<Json<EventSpec>> {
    s.read(|sim| sim.config().events.iter().find(|e| e.event_id == id).cloned())
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", format!("event {id}")))
}

/// Registers an event; while Paused this is an injection perceived at the
/// tick covering its time.
async fn post_event(State(s): S, body: String) -> ApiResult<Json<Value>> {
    let event: EventSpec = parse_body(&body)?;
    command(s, move |sim| sim.inject_event(event).map(mutation)).await
}

async fn delete_entity(State(s): S, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    command(s, move |sim| sim.remove_entity(&id).map(mutation)).await
}

fn run_view(state: RunState, last_error: Option<(String, String)>) -> Json<Value> {
    let mut v = serde_json::to_value(state).expect("state serializes");
    if let Some((code, message)) = last_error {
        v["last_error"] = json!({"code": code, "message": message});
    }
    Json(v)
}

async fn get_run(State(s): S) -> Json<Value> {
    run_view(s.read(|sim| sim.state().clone()), s.last_error())
}

async fn run_op(State(s): S, Path(op): Path<String>) -> ApiResult<Json<Value>> {
    match op.as_str() {
        "start" => command(s, |sim| sim.start().cloned()).await.map(|st| run_view(st, None)),
        "pause" => command(s, |sim| sim.pause().cloned()).await.map(|st| run_view(st, None)),
        "resume" => command(s, |sim| sim.resume().cloned()).await.map(|st| run_view(st, None)),
        "reset" => {
            let (archived, state) = command(s, |sim| {
                let archive = sim.reset()?;
                Ok((archive.run_id, sim.state().clone()))
            })
            .await?;
            let mut v = run_view(state, None).0;
            v["archived_run_id"] = json!(archived);
            Ok(Json(v))
        }
        "snapshot" => command(s, |sim| {
            let snap = sim.snapshot()?;
            Ok(Json(json!({"tick": snap.run.current_tick, "log_len": snap.log_len})))
        })
        .await,
        _ => Err(ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", format!("no run operation {op:?}"))),
    }
}

type Params = Query<HashMap<String, String>>;

fn num<T: std::str::FromStr>(params: &HashMap<String, String>, key: &str) -> ApiResult<Option<T>> {
    params
        .get(key)
        .map(|v| v.parse().map_err(|_| ApiError::bad_request(format!("{key}={v:?} is not a number"))))
        .transpose()
}

fn log_of(s: &Session) -> Vec<sparkle_core::LogEntry> {
    s.read(|sim| sim.log().to_vec())
}

async fn calendar(State(s): S, Query(p): Params) -> ApiResult<Json<views::Calendar>> {
    let kinds = match p.get("kinds").or_else(|| p.get("kind")) {
        None => Vec::new(),
        Some(list) => list
            .split(',')
            .filter(|k| !k.is_empty())
            .map(|k| {
                serde_json::from_value::<BehaviorKind>(Value::String(k.trim().to_string()))
                    .map_err(|_| ApiError::bad_request(format!("unknown behavior kind {k:?}")))
            })
            .collect::<ApiResult<_>>()?,
    };
    let query = CalendarQuery {
        agent: p.get("agent").cloned(),
        min_importance: num(&p, "min_importance")?,
        kinds,
    };
    Ok(Json(views::calendar(&log_of(&s), &query)?))
}

async fn sparks(State(s): S, Query(p): Params) -> ApiResult<Json<views::Page<views::SparkSummary>>> {
    let page = views::spark_page(
        &log_of(&s),
        p.get("author").map(String::as_str),
        num(&p, "cursor")?,
        num(&p, "limit")?,
    );
    Ok(Json(page))
}

async fn spark(State(s): S, Path(id): Path<String>) -> ApiResult<Json<views::SparkSummary>> {
    Ok(Json(views::spark_detail(&log_of(&s), &id)?))
}

async fn hidden(State(s): S, Path(id): Path<String>) -> ApiResult<Json<views::HiddenReasons>> {
    Ok(Json(views::hidden(&log_of(&s), &id)?))
}

async fn reasoning(State(s): S, Path(id): Path<String>) -> ApiResult<Json<sparkle_core::ReasoningTrace>> {
    Ok(Json(views::reasoning(&log_of(&s), &id)?))
}

async fn network(State(s): S, Query(p): Params) -> ApiResult<Json<Value>> {
    let log = log_of(&s);
    let at_tick = num(&p, "at_tick")?.unwrap_or_else(|| views::committed_ticks(&log));
    let edges = views::network(&log, at_tick)?;
    Ok(Json(json!({"at_tick": at_tick, "edges": edges})))
}

fn page<T: Clone + Serialize>(items: Vec<(u64, T)>, p: &HashMap<String, String>) -> ApiResult<Json<views::Page<T>>> {
    Ok(Json(views::paginate(&items, num(p, "cursor")?, num(p, "limit")?)))
}

async fn behaviors(State(s): S, Query(p): Params) -> ApiResult<Json<views::Page<sparkle_core::BehaviorRecord>>> {
    let mut items = views::behaviors(&log_of(&s));
    if let Some(agent) = p.get("agent") {
        items.retain(|(_, b)| &b.agent == agent);
    }
    page(items, &p)
}

async fn traces(State(s): S, Query(p): Params) -> ApiResult<Json<views::Page<sparkle_core::ReasoningTrace>>> {
    let mut items = views::traces(&log_of(&s));
    if let Some(agent) = p.get("agent") {
        items.retain(|(_, t)| &t.subject == agent);
    }
    page(items, &p)
}

async fn export(State(s): S, Path(what): Path<String>) -> ApiResult<Response> {
    let kind: ExportKind = what.parse().map_err(|e: views::ViewError| {
        ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", e.to_string())
    })?;
    let body = views::export(&log_of(&s), kind);
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

pub(crate) fn last_event_id(headers: &HeaderMap) -> Option<u64> {
    headers.get("last-event-id")?.to_str().ok()?.trim().parse().ok()
}
