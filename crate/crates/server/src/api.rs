//! HTTP/JSON surface: health, live session inspection, and the offline
//! operations (generate, detect, display, check, emit, simulate).

use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use rapport_core::display::{compute_display, write_display_csv, DisplayConfig, DisplayParams};
use rapport_core::harness::{check_trace, emit_display, run_scenario, CheckReport, Scenario, SimOptions, SimReport, Viewer};
use rapport_core::lesson::LessonPhase;
use rapport_core::protocol::PROTOCOL_VERSION;
use rapport_core::signals::analysis::scr_onsets;
use rapport_core::signals::io::{read_trace, trace_to_string};
use rapport_core::signals::{detect_pulse_rate, detect_scr_rate, GenParams, SignalFrame, SignalTrace};
use rapport_core::trace::Trace;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{connection, hub::Hub};

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl ToString) -> Self {
        ApiError { status, code, message: message.to_string() }
    }

    fn invalid(code: &'static str, message: impl ToString) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/ws", get(ws))
        .route("/api/sessions", get(sessions))
        .route("/api/sessions/{sid}", get(session))
        .route("/api/gen", post(gen))
        .route("/api/detect/pulse", post(detect_pulse))
        .route("/api/detect/scr", post(detect_scr))
        .route("/api/display", post(display))
        .route("/api/check", post(check))
        .route("/api/emit-display", post(emit))
        .route("/api/simulate", post(simulate))
        .with_state(hub)
}

async fn health(State(hub): State<Arc<Hub>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "protocol": PROTOCOL_VERSION,
        "sessions": hub.session_ids().len(),
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

async fn ws(State(hub): State<Arc<Hub>>, upgrade: WebSocketUpgrade) -> Response {
    upgrade.on_upgrade(move |socket: WebSocket| async move {
        let (sink, stream) = socket.split();
        let incoming = stream
            .take_while(|m| futures::future::ready(matches!(m, Ok(m) if !matches!(m, Message::Close(_)))))
            .filter_map(|m| async move {
                match m {
                    Ok(Message::Text(t)) => Some(t.to_string()),
                    _ => None,
                }
            });
        let outgoing = sink.with(|s: String| async move { Ok::<_, axum::Error>(Message::Text(s.into())) });
        connection::serve(hub, Box::pin(incoming), Box::pin(outgoing)).await;
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub sid: String,
    pub members: usize,
    pub phase: LessonPhase,
    pub seq_head: u64,
}

async fn sessions(State(hub): State<Arc<Hub>>) -> Json<Vec<SessionSummary>> {
    let mut out = Vec::new();
    for sid in hub.session_ids() {
        if let Some(s) = hub.snapshot(&sid).await {
            out.push(SessionSummary { sid, members: s.roster.len(), phase: s.phase, seq_head: s.seq_head });
        }
    }
    Json(out)
}

async fn session(State(hub): State<Arc<Hub>>, Path(sid): Path<String>) -> ApiResult<Response> {
    match hub.snapshot(&sid).await {
        Some(s) => Ok(Json(s).into_response()),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "unknown-session", format!("no session {sid}"))),
    }
}

fn jsonl(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

async fn gen(Json(params): Json<GenParams>) -> ApiResult<Response> {
    let trace = params.generate().map_err(|e| ApiError::invalid(e.code(), e))?;
    Ok(jsonl(trace_to_string(&trace, Some(params.seed))))
}

fn signal_trace(body: &str) -> ApiResult<SignalTrace> {
    read_trace(body.as_bytes()).map(|(t, _)| t).map_err(|e| ApiError::invalid("malformed-trace", e))
}

async fn detect_pulse(body: String) -> ApiResult<Json<Value>> {
    let trace = signal_trace(&body)?;
    let bpm = detect_pulse_rate(&trace).map_err(|e| ApiError::invalid(e.code(), e))?;
    Ok(Json(json!({"bpm": bpm})))
}

#[derive(Deserialize)]
struct ScrQuery {
    threshold: Option<f64>,
}

async fn detect_scr(State(hub): State<Arc<Hub>>, Query(q): Query<ScrQuery>, body: String) -> ApiResult<Json<Value>> {
    let trace = signal_trace(&body)?;
    let threshold = q.threshold.unwrap_or(hub.config().scr.slope_threshold_us_per_s);
    let rate = detect_scr_rate(&trace, threshold).map_err(|e| ApiError::invalid(e.code(), e))?;
    let onsets: Vec<i64> = scr_onsets(&trace.samples, threshold).into_iter().map(|i| trace.samples[i].t_ms).collect();
    Ok(Json(json!({"per_min": rate, "onsets_ms": onsets, "threshold": threshold})))
}

#[derive(Debug, Deserialize)]
pub struct DisplayRequest {
    pub participant: String,
    pub frames: Vec<SignalFrame>,
    pub now_ms: i64,
    #[serde(default)]
    pub config: Option<DisplayConfig>,
}

async fn display(State(hub): State<Arc<Hub>>, Json(req): Json<DisplayRequest>) -> ApiResult<Json<DisplayParams>> {
    let cfg = req.config.unwrap_or(hub.config().display);
    cfg.validate().map_err(|e| ApiError::invalid(e.code(), e))?;
    let mut frames = req.frames;
    frames.sort_by_key(|f| f.t_ms);
    Ok(Json(compute_display(&req.participant, &frames, &cfg, req.now_ms)))
}

fn session_trace(body: &str) -> ApiResult<Trace> {
    Trace::from_str(body).map_err(|e| ApiError::invalid(e.code(), e))
}

async fn check(body: String) -> ApiResult<Json<CheckReport>> {
    Ok(Json(check_trace(&session_trace(&body)?)))
}

#[derive(Debug, Deserialize)]
pub struct EmitRequest {
    pub trace: String,
    pub participant: String,
    /// A participant id; omitted means any peer.
    #[serde(default)]
    pub viewer: Option<String>,
}

async fn emit(Json(req): Json<EmitRequest>) -> ApiResult<Response> {
    let trace = session_trace(&req.trace)?;
    let viewer = req.viewer.map(Viewer::Participant).unwrap_or(Viewer::Peers);
    let rows = emit_display(&trace, &req.participant, &viewer).map_err(|e| {
        let code = match e {
            rapport_core::harness::EmitError::NotRecorded => "frames-not-recorded",
            rapport_core::harness::EmitError::NoFrames(_) => "no-frames-for-participant",
        };
        ApiError::invalid(code, e)
    })?;
    let mut csv = Vec::new();
    write_display_csv(&mut csv, &rows).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

#[derive(Debug, Deserialize)]
pub struct SimulateRequest {
    /// A scenario object, or the name of a bundled scenario.
    pub scenario: Value,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub record_frames: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulateResponse {
    pub trace: String,
    pub report: SimReport,
}

async fn simulate(Json(req): Json<SimulateRequest>) -> ApiResult<Json<SimulateResponse>> {
    let scenario = match req.scenario {
        Value::String(name) => Scenario::bundled(&name)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown-scenario", format!("no bundled scenario {name}")))?,
        other => Scenario::from_json(&other.to_string()).map_err(|e| ApiError::invalid("scenario-invalid", e))?,
    };
    let opts = SimOptions { seed: req.seed, record_frames: req.record_frames };
    // long lessons take a while; keep the runtime's workers free
    let out = tokio::task::spawn_blocking(move || run_scenario(&scenario, &opts))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))?
        .map_err(|e| ApiError::invalid("scenario-invalid", e))?;
    Ok(Json(SimulateResponse { trace: out.trace, report: out.report }))
}
