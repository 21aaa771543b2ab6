//! HTTP control surface and the per-session event stream.
//!
//! Every handler goes through [`Service`]; none touches a rig.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use palpbench_core::dsp::all_columns;
use palpbench_core::SimConfig;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{PlanSpec, SessionConfig};
use crate::events::{parse_kinds, EventKind};
use crate::persist::{SessionDir, MANIFEST_VERSION};
use crate::session::{resolve_plan, Service, SessionError};
use crate::store::{read_file, StoreError};

pub struct ApiError(SessionError);

impl<E: Into<SessionError>> From<E> for ApiError {
    fn from(e: E) -> Self {
        Self(e.into())
    }
}

fn status_of(e: &SessionError) -> StatusCode {
    use SessionError as S;
    match e {
        S::Store(StoreError::NotFound { .. }) => StatusCode::NOT_FOUND,
        S::Store(StoreError::Exists { .. }) => StatusCode::CONFLICT,
        S::Store(StoreError::BadId(_)) => StatusCode::BAD_REQUEST,
        S::Store(StoreError::Phantom(_)) | S::Scan(_) | S::Sim(_) | S::Dsp(_) | S::MissingCalibration(_) => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        S::BadState { .. } | S::Busy(_) | S::NotRunning(_) => StatusCode::CONFLICT,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_of(&self.0), Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Svc = State<Arc<Service>>;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/schema", get(schema))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/plan", get(get_plan))
        .route("/sessions/{id}/run", post(run))
        .route("/sessions/{id}/pause", post(pause))
        .route("/sessions/{id}/resume", post(resume))
        .route("/sessions/{id}/stop", post(stop))
        .route("/sessions/{id}/features", get(features))
        .route("/sessions/{id}/predictions", get(predictions))
        .route("/sessions/{id}/map.png", get(map_png))
        .route("/sessions/{id}/map.json", get(map_json))
        .route("/sessions/{id}/stream", get(stream))
        .route("/plans", post(preview_plan))
        .route("/phantoms", get(|s: Svc| list_kind(s, "phantoms")))
        .route("/calibrations", get(|s: Svc| list_kind(s, "calibrations")))
        .route("/models", get(|s: Svc| list_kind(s, "models")))
        .route("/calibrations/{id}", get(get_calibration))
        .route("/models/{id}", get(get_model))
        .with_state(service)
}

async fn schema() -> Json<Value> {
    Json(json!({
        "manifest_version": MANIFEST_VERSION,
        "event_kinds": EventKind::ALL.iter().map(|k| k.as_str()).collect::<Vec<_>>(),
        "feature_columns": all_columns(),
        "features_csv": ["index", "x", "y", "material", "mask", "<feature columns>"],
        "predictions_csv": ["index", "x", "y", "predicted", "p_<class>..."],
        "force_csv": ["displacement_mm", "force_n"],
        "audio": "mono 16-bit PCM WAV per microphone",
        "stream": {
            "first_message": "snapshot",
            "messages": ["event", "gap", "ack", "error"],
            "controls": ["run", "pause", "resume", "stop"],
        },
    }))
}

async fn list_kind(State(svc): Svc, kind: &'static str) -> ApiResult<Json<Vec<String>>> {
    Ok(Json(svc.root().list(kind)?))
}

async fn get_calibration(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let doc = svc.root().load_calibration(&id)?;
    Ok(Json(serde_json::to_value(doc).expect("calibration json")))
}

async fn get_model(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let m = svc.root().load_model(&id)?;
    Ok(Json(json!({
        "kind": m.kind(),
        "class_names": m.class_names,
        "mask": m.mask.to_string(),
        "dataset_hash": m.dataset_hash,
    })))
}

async fn list_sessions(State(svc): Svc) -> ApiResult<Json<Value>> {
    let svc = svc.clone();
    let views = tokio::task::spawn_blocking(move || svc.list()).await.expect("list task")?;
    Ok(Json(serde_json::to_value(views).expect("views json")))
}

async fn create_session(State(svc): Svc, Json(cfg): Json<SessionConfig>) -> ApiResult<Response> {
    let view = tokio::task::spawn_blocking(move || svc.create(cfg)).await.expect("create task")?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.get(&id)?.view()).into_response())
}

async fn get_plan(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    let m = svc.get(&id)?.dir.load_manifest()?;
    Ok(Json(m.plan).into_response())
}

#[derive(Deserialize)]
struct RunQuery {
    pace_ms: Option<u64>,
}

fn accepted(svc: &Service, id: &str) -> ApiResult<Response> {
    Ok((StatusCode::ACCEPTED, Json(svc.get(id)?.view())).into_response())
}

async fn run(State(svc): Svc, Path(id): Path<String>, Query(q): Query<RunQuery>) -> ApiResult<Response> {
    svc.run(&id, q.pace_ms)?;
    accepted(&svc, &id)
}

async fn pause(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    svc.pause(&id)?;
    accepted(&svc, &id)
}

async fn resume(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    svc.resume(&id)?;
    accepted(&svc, &id)
}

async fn stop(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    svc.stop(&id)?;
    accepted(&svc, &id)
}

fn file_response(path: &std::path::Path, content_type: &'static str) -> ApiResult<Response> {
    let bytes = read_file(path)?;
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}

fn session_dir(svc: &Service, id: &str) -> ApiResult<SessionDir> {
    Ok(svc.get(id)?.dir.clone())
}

async fn features(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    file_response(&session_dir(&svc, &id)?.features_path(), "text/csv")
}

async fn predictions(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    let dir = session_dir(&svc, &id)?;
    if !dir.predictions_path().exists() {
        return Err(StoreError::NotFound { kind: "predictions", id }.into());
    }
    file_response(&dir.predictions_path(), "text/csv")
}

async fn map_file(svc: &Service, id: String, png: bool) -> ApiResult<Response> {
    let dir = session_dir(svc, &id)?;
    let (path, ct) = if png {
        (dir.map_png_path(), "image/png")
    } else {
        (dir.map_json_path(), "application/json")
    };
    if !path.exists() {
        return Err(StoreError::NotFound { kind: "map", id }.into());
    }
    file_response(&path, ct)
}

async fn map_png(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    map_file(&svc, id, true).await
}

async fn map_json(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    map_file(&svc, id, false).await
}

#[derive(Deserialize)]
struct PlanPreview {
    phantom: String,
    calibration: Option<String>,
    #[serde(default)]
    sim: SimConfig,
    plan: PlanSpec,
}

async fn preview_plan(State(svc): Svc, Json(req): Json<PlanPreview>) -> ApiResult<Response> {
    let plan = tokio::task::spawn_blocking(move || -> Result<_, SessionError> {
        let phantom = svc.root().load_phantom(&req.phantom)?;
        let cal = req.calibration.as_deref().map(|c| svc.root().load_calibration(c)).transpose()?;
        resolve_plan(&req.plan, &phantom, &req.sim, cal.as_ref())
    })
    .await
    .expect("plan task")?;
    Ok(Json(json!({ "plan": plan, "travel_mm": plan.travel() })).into_response())
}

async fn stream(
    State(svc): Svc,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
    ws: WebSocketUpgrade,
) -> ApiResult<Response> {
    let kinds = match parse_kinds(q.get("kinds").map_or("", String::as_str)) {
        Ok(k) => k,
        Err(e) => return Ok((StatusCode::BAD_REQUEST, Json(json!({ "error": e }))).into_response()),
    };
    let session = svc.get(&id)?;
    let sub = session.bus.subscribe(kinds);
    Ok(ws.on_upgrade(move |socket| pump(socket, svc, id, sub)))
}

fn text(v: Value) -> Message {
    Message::Text(v.to_string().into())
}

fn control(svc: &Service, id: &str, msg: &str) -> Value {
    let cmd = serde_json::from_str::<Value>(msg)
        .ok()
        .and_then(|v| v.get("control").and_then(Value::as_str).map(str::to_string));
    let result = match cmd.as_deref() {
        Some("run") => svc.run(id, None),
        Some("pause") => svc.pause(id),
        Some("resume") => svc.resume(id),
        Some("stop") => svc.stop(id),
        _ => return json!({ "type": "error", "error": format!("unrecognized message: {msg}") }),
    };
    match result {
        Ok(()) => json!({ "type": "ack", "control": cmd }),
        Err(e) => json!({ "type": "error", "control": cmd, "error": e.to_string() }),
    }
}

async fn pump(mut socket: WebSocket, svc: Arc<Service>, id: String, sub: crate::events::Subscription) {
    let snap = json!({
        "type": "snapshot",
        "state": sub.snapshot.state,
        "point_results": sub.snapshot.point_results,
    });
    if socket.send(text(snap)).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            d = sub.recv() => {
                let Some(d) = d else { break };
                let v = serde_json::to_value(&d).expect("delivery json");
                if socket.send(text(v)).await.is_err() {
                    break;
                }
            }
            m = socket.recv() => match m {
                Some(Ok(Message::Text(t))) => {
                    let reply = control(&svc, &id, t.as_str());
                    if socket.send(text(reply)).await.is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            }
        }
    }
}

/// Serve until the process is stopped.
pub async fn serve(service: Arc<Service>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service)).await
}
