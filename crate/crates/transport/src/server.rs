use std::collections::HashMap;
use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use thiserror::Error;
use tokio::sync::oneshot;

use spatial_core::image::StoredImage;
use spatial_core::protocol::{InjectMode, ToolRequest, ToolResponse, ATOMIC_PATH, HEALTH_PATH, INJECT_HEADER, PROTOCOL_VERSION};
use spatial_core::tools::{validate_and_bind, AtomicDescriptor, AtomicRequest, Backend, Registry, SyntheticBackend};
use spatial_core::world::SceneStore;

/// How far past the request deadline an injected timeout sleeps.
pub const TIMEOUT_OVERSHOOT: Duration = Duration::from_millis(250);

/// Responses kept for duplicate request ids before the cache is reset.
const CACHE_LIMIT: usize = 50_000;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    BindFailed { addr: String, source: std::io::Error },
    #[error("cannot start the server runtime: {0}")]
    Runtime(std::io::Error),
}

struct ServerState {
    backend: SyntheticBackend,
    scenes: SceneStore,
    descriptors: Vec<AtomicDescriptor>,
    answered: Mutex<HashMap<String, ToolResponse>>,
    executed: AtomicUsize,
}

/// A `tool.v1` server over synthetic scenes, running on its own thread.
///
/// It serves every default atomic, answers a repeated request id from its
/// cache, and simulates faults requested through the `x-inject` header.
/// Dropping the handle stops the server.
pub struct MockServer {
    addr: SocketAddr,
    state: Arc<ServerState>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for MockServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockServer").field("addr", &self.addr).finish_non_exhaustive()
    }
}

impl MockServer {
    /// Noise-free server over `scenes` bound to `bind_addr` (port 0 picks a free port).
    pub fn start(scenes: SceneStore, bind_addr: &str) -> Result<Self, ServeError> {
        Self::with_backend(SyntheticBackend::new(scenes), bind_addr)
    }

    pub fn with_backend(backend: SyntheticBackend, bind_addr: &str) -> Result<Self, ServeError> {
        let bind_err = |source| ServeError::BindFailed { addr: bind_addr.to_string(), source };
        let listener = TcpListener::bind(bind_addr).map_err(bind_err)?;
        listener.set_nonblocking(true).map_err(bind_err)?;
        let addr = listener.local_addr().map_err(bind_err)?;
        let state = Arc::new(ServerState {
            scenes: backend.scenes().clone(),
            backend,
            descriptors: Registry::defaults_descriptors(),
            answered: Mutex::new(HashMap::new()),
            executed: AtomicUsize::new(0),
        });
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()
            .map_err(ServeError::Runtime)?;
        let app = Router::new()
            .route(ATOMIC_PATH, post(atomic))
            .route(HEALTH_PATH, get(health))
            .with_state(state.clone());
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener is non-blocking");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(Self { addr, state, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests that reached the backend; cache hits and injected faults are not counted.
    pub fn executed(&self) -> usize {
        self.state.executed.load(Ordering::Relaxed)
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

async fn health(State(state): State<Arc<ServerState>>) -> Json<serde_json::Value> {
    let atomics: Vec<&str> = state.descriptors.iter().map(|d| d.name.as_str()).collect();
    Json(json!({ "status": "ok", "protocol": PROTOCOL_VERSION, "atomics": atomics, "scenes": state.scenes.len() }))
}

async fn atomic(State(state): State<Arc<ServerState>>, headers: HeaderMap, body: Bytes) -> Response {
    let request: ToolRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, format!("invalid request body: {e}")).into_response(),
    };
    if let Err(e) = request.validate() {
        return Json(ToolResponse::error(request.request_id, e.to_string())).into_response();
    }
    if let Some(cached) = state.answered.lock().expect("cache lock").get(&request.request_id) {
        return Json(cached.clone()).into_response();
    }
    let inject = headers.get(INJECT_HEADER).and_then(|v| v.to_str().ok()).and_then(InjectMode::parse);
    match inject {
        Some(InjectMode::Unavailable) => return StatusCode::SERVICE_UNAVAILABLE.into_response(),
        Some(InjectMode::Timeout) => {
            tokio::time::sleep(Duration::from_millis(request.deadline_ms) + TIMEOUT_OVERSHOOT).await;
            return Json(ToolResponse::error(request.request_id, "injected timeout")).into_response();
        }
        Some(InjectMode::Empty) => return Json(ToolResponse::empty(request.request_id)).into_response(),
        Some(InjectMode::Error) => {
            return Json(ToolResponse::error(request.request_id, "injected execution error")).into_response()
        }
        None => {}
    }
    let worker = state.clone();
    let response = match tokio::task::spawn_blocking(move || execute(&worker, request)).await {
        Ok(r) => r,
        Err(e) => return (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    };
    let mut cache = state.answered.lock().expect("cache lock");
    if cache.len() >= CACHE_LIMIT {
        cache.clear();
    }
    cache.insert(response.request_id.clone(), response.clone());
    Json(response).into_response()
}

fn execute(state: &ServerState, request: ToolRequest) -> ToolResponse {
    state.executed.fetch_add(1, Ordering::Relaxed);
    let id = request.request_id.clone();
    let Some(descriptor) = state.descriptors.iter().find(|d| d.name == request.atomic_name) else {
        return ToolResponse::error(id, "unknown operation");
    };
    let mut input = match validate_and_bind(descriptor, &request.args) {
        Ok(i) => i,
        Err(e) => return ToolResponse::error(id, e.to_string()),
    };
    input.inputs = request.inputs;
    let raster = match (request.image.decode(), &request.image.reference) {
        (Some(Ok(r)), _) => r,
        (Some(Err(e)), _) => return ToolResponse::error(id, format!("undecodable image: {e}")),
        (None, Some(view)) => match state.scenes.resolve(view) {
            Some(scene) => Arc::new(scene.render()),
            None => return ToolResponse::error(id, format!("unknown scene `{}`", view.scene_id)),
        },
        (None, None) => return ToolResponse::error(id, "image needs a reference or inline data"),
    };
    let image = StoredImage { raster, source: request.image.reference, path: None };
    let call = AtomicRequest {
        name: &request.atomic_name,
        input: &input,
        image: &image,
        seed: request.seed,
        budget: Some(Duration::from_millis(request.deadline_ms)),
        inject: None,
    };
    ToolResponse::from_result(id, state.backend.invoke(&call))
}
