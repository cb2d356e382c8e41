//! In-process stand-in for the vehicle enquiry service.
//!
//! Routes:
//! - `POST /vehicles`: lookup; honours `X-Inject-Fault: timeout|500`
//! - `GET /metrics/hits`: per-plate request counts
//! - `POST /admin/faults`: `{"kind":"500"|"timeout","count":n}` arms the next
//!   `n` lookups to fail, whatever their headers say

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::Mutex;
use serde::Deserialize;
use serde_json::json;

use super::{RegistryError, VehicleRecord};

pub const FAULT_HEADER: &str = "X-Inject-Fault";

#[derive(Debug, Clone)]
pub struct MockOptions {
    /// How long a `timeout` fault stalls before answering.
    pub timeout_delay: Duration,
}

impl Default for MockOptions {
    fn default() -> Self {
        Self { timeout_delay: Duration::from_secs(30) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fault {
    Timeout,
    ServerError,
}

impl Fault {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "timeout" => Some(Fault::Timeout),
            "500" => Some(Fault::ServerError),
            _ => None,
        }
    }
}

struct MockState {
    records: HashMap<String, VehicleRecord>,
    hits: Mutex<BTreeMap<String, u64>>,
    armed: Mutex<VecDeque<Fault>>,
    opts: MockOptions,
}

#[derive(Deserialize)]
struct LookupRequest {
    #[serde(rename = "registrationNumber")]
    registration_number: String,
}

#[derive(Deserialize)]
struct ArmRequest {
    kind: String,
    #[serde(default = "one")]
    count: usize,
}

fn one() -> usize {
    1
}

fn plate_key(raw: &str) -> String {
    crate::plate::normalize(raw).map(|p| p.to_string()).unwrap_or_else(|_| raw.trim().to_uppercase())
}

async fn lookup(State(state): State<Arc<MockState>>, headers: HeaderMap, body: String) -> Response {
    let req: LookupRequest = match serde_json::from_str(&body) {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, Json(json!({ "error": e.to_string() }))).into_response(),
    };
    let key = plate_key(&req.registration_number);
    *state.hits.lock().entry(key.clone()).or_insert(0) += 1;

    let fault = state
        .armed
        .lock()
        .pop_front()
        .or_else(|| headers.get(FAULT_HEADER).and_then(|v| v.to_str().ok()).and_then(Fault::parse));
    match fault {
        Some(Fault::ServerError) => {
            return (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": "injected fault" }))).into_response()
        }
        Some(Fault::Timeout) => {
            tokio::time::sleep(state.opts.timeout_delay).await;
            return (StatusCode::GATEWAY_TIMEOUT, Json(json!({ "error": "injected timeout" }))).into_response();
        }
        None => {}
    }
    match state.records.get(&key) {
        Some(r) => (StatusCode::OK, Json(r.clone())).into_response(),
        None => (StatusCode::NOT_FOUND, Json(json!({ "error": "not found" }))).into_response(),
    }
}

async fn hits(State(state): State<Arc<MockState>>) -> Json<BTreeMap<String, u64>> {
    Json(state.hits.lock().clone())
}

async fn arm(State(state): State<Arc<MockState>>, Json(req): Json<ArmRequest>) -> Response {
    let Some(fault) = Fault::parse(&req.kind) else {
        return (StatusCode::BAD_REQUEST, Json(json!({ "error": "kind must be timeout or 500" }))).into_response();
    };
    state.armed.lock().extend(std::iter::repeat(fault).take(req.count));
    StatusCode::NO_CONTENT.into_response()
}

/// Running mock server. Stops when dropped.
pub struct MockServer {
    addr: SocketAddr,
    state: Arc<MockState>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl MockServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Same data as `GET /metrics/hits`, without going through HTTP.
    pub fn hits(&self) -> BTreeMap<String, u64> {
        self.state.hits.lock().clone()
    }

    pub fn hits_for(&self, plate: &str) -> u64 {
        self.state.hits.lock().get(&plate_key(plate)).copied().unwrap_or(0)
    }

    /// Queues `count` faults (`timeout` or `500`) for the next lookups, like
    /// `POST /admin/faults`.
    pub fn arm(&self, kind: &str, count: usize) -> Result<(), RegistryError> {
        let fault = Fault::parse(kind).ok_or_else(|| RegistryError::InvalidConfig(format!("unknown fault kind `{kind}`")))?;
        self.state.armed.lock().extend(std::iter::repeat(fault).take(count));
        Ok(())
    }

    /// Blocks until the server thread exits (it only does on shutdown).
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop();
    }
}

pub fn serve_mock(fixtures: Vec<VehicleRecord>, bind: &str, opts: MockOptions) -> Result<MockServer, RegistryError> {
    let mut records = HashMap::new();
    for r in fixtures {
        r.validate().map_err(RegistryError::FixtureParseError)?;
        records.insert(plate_key(&r.registration), r);
    }
    let state = Arc::new(MockState { records, hits: Mutex::default(), armed: Mutex::default(), opts });

    let listener = std::net::TcpListener::bind(bind).map_err(|e| RegistryError::BindFailure(format!("{bind}: {e}")))?;
    listener.set_nonblocking(true).map_err(|e| RegistryError::BindFailure(e.to_string()))?;
    let addr = listener.local_addr().map_err(|e| RegistryError::BindFailure(e.to_string()))?;

    let app = Router::new()
        .route("/vehicles", post(lookup))
        .route("/metrics/hits", get(hits))
        .route("/admin/faults", post(arm))
        .with_state(state.clone());

    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let (ready_tx, ready_rx) = std::sync::mpsc::channel::<Result<(), String>>();
    let thread = std::thread::Builder::new()
        .name("registry-mock".into())
        .spawn(move || {
            let rt = match tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build() {
                Ok(rt) => rt,
                Err(e) => {
                    let _ = ready_tx.send(Err(e.to_string()));
                    return;
                }
            };
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(listener) {
                    Ok(l) => l,
                    Err(e) => {
                        let _ = ready_tx.send(Err(e.to_string()));
                        return;
                    }
                };
                let _ = ready_tx.send(Ok(()));
                tokio::select! {
                    res = axum::serve(listener, app) => {
                        if let Err(e) = res {
                            tracing::error!(error = %e, "mock registry stopped");
                        }
                    }
                    _ = rx => {}
                }
            });
            // Stalled `timeout` handlers must not hold up shutdown.
            rt.shutdown_background();
        })
        .map_err(|e| RegistryError::BindFailure(e.to_string()))?;

    match ready_rx.recv() {
        Ok(Ok(())) => {}
        Ok(Err(e)) => return Err(RegistryError::BindFailure(e)),
        Err(_) => return Err(RegistryError::BindFailure("server thread exited during startup".into())),
    }
    Ok(MockServer { addr, state, shutdown: Some(tx), thread: Some(thread) })
}
