//! HTTP front end for one or more backend instances.
//!
//! `GET /frame` captures and annotates the current screen, `POST /batch`
//! executes an [`ActionBatch`] against it. Both take an optional
//! `?instance=<id>` query parameter, defaulting to `default`. Batches for one
//! instance run strictly one after another.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{execute_batch, ActionBatch, ActionLog, ActionLogEntry, Backend, CrashReport, InputContext, LogRecord, MACRO_BATCH_SCHEMA};
use crate::annotation::{annotate, render_table, Annotator, UiElement};

pub struct Instance {
    backend: Box<dyn Backend>,
    annotator: Box<dyn Annotator>,
    last_frame: Option<(u64, Vec<UiElement>)>,
    log: ActionLog,
}

impl Instance {
    pub fn new(backend: Box<dyn Backend>, annotator: Box<dyn Annotator>, log: ActionLog) -> Self {
        Self { backend, annotator, last_frame: None, log }
    }
}

#[derive(Clone)]
struct AppState {
    instances: Arc<BTreeMap<String, Mutex<Instance>>>,
    validator: Arc<jsonschema::Validator>,
}

#[derive(Debug, Deserialize)]
struct Selector {
    instance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResponse {
    pub sequence: u64,
    pub context: InputContext,
    pub elements: Vec<UiElement>,
    pub table: String,
    pub crash: Option<CrashReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub index: usize,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResponse {
    pub results: Vec<ActionResult>,
    pub entries: Vec<ActionLogEntry>,
    pub crash: Option<CrashReport>,
}

type ApiError = (StatusCode, String);

pub fn router(instances: BTreeMap<String, Instance>) -> Router {
    let schema: Value = serde_json::from_str(MACRO_BATCH_SCHEMA).expect("batch schema is valid JSON");
    let validator = jsonschema::validator_for(&schema).expect("batch schema compiles");
    let state = AppState {
        instances: Arc::new(instances.into_iter().map(|(k, v)| (k, Mutex::new(v))).collect()),
        validator: Arc::new(validator),
    };
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/frame", get(frame))
        .route("/batch", post(batch))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, instances: BTreeMap<String, Instance>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("macro service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(instances)).await
}

fn with_instance<T>(
    state: &AppState,
    selector: &Selector,
    f: impl FnOnce(&mut Instance) -> Result<T, ApiError>,
) -> Result<T, ApiError> {
    let id = selector.instance.as_deref().unwrap_or("default");
    let slot = state.instances.get(id).ok_or((StatusCode::NOT_FOUND, format!("unknown instance {id:?}")))?;
    let mut inst = slot.lock().map_err(|_| (StatusCode::INTERNAL_SERVER_ERROR, "instance lock poisoned".to_string()))?;
    f(&mut inst)
}

async fn frame(State(state): State<AppState>, Query(sel): Query<Selector>) -> Result<Json<FrameResponse>, ApiError> {
    with_instance(&state, &sel, |inst| {
        let frame = inst.backend.observe();
        let elements = annotate(&frame, inst.annotator.as_ref()).map_err(|e| (StatusCode::BAD_GATEWAY, e.to_string()))?;
        inst.last_frame = Some((frame.sequence, elements.clone()));
        Ok(Json(FrameResponse {
            sequence: frame.sequence,
            context: inst.backend.context(),
            table: render_table(&elements),
            elements,
            crash: inst.backend.crash(),
        }))
    })
}

async fn batch(
    State(state): State<AppState>,
    Query(sel): Query<Selector>,
    Json(body): Json<Value>,
) -> Result<Json<BatchResponse>, ApiError> {
    if let Some(err) = state.validator.iter_errors(&body).next() {
        return Err((StatusCode::BAD_REQUEST, format!("{err} at {}", err.instance_path)));
    }
    let batch: ActionBatch = serde_json::from_value(body).map_err(|e| (StatusCode::BAD_REQUEST, e.to_string()))?;
    with_instance(&state, &sel, |inst| {
        let (sequence, elements) = inst.last_frame.clone().unwrap_or((u64::MAX, Vec::new()));
        let outcome = execute_batch(&batch, inst.backend.as_mut(), &elements, sequence);
        for entry in &outcome.entries {
            inst.log
                .push(LogRecord::Action(entry.clone()))
                .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        }
        let mut results: Vec<ActionResult> = (0..outcome.entries.len())
            .map(|index| ActionResult { index, ok: true, error_kind: None, error: None })
            .collect();
        if let Some(err) = &outcome.error {
            results.push(ActionResult {
                index: outcome.entries.len(),
                ok: false,
                error_kind: Some(err.kind().to_string()),
                error: Some(err.to_string()),
            });
        }
        Ok(Json(BatchResponse { results, entries: outcome.entries, crash: inst.backend.crash() }))
    })
}
