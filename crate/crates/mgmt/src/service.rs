//! The management HTTP service.
//!
//! | method | path | body / query |
//! |---|---|---|
//! | GET | /topology | |
//! | GET | /demands | `?state=pending\|processing\|computed` |
//! | GET | /events | `?since=<seq>`; server-sent events with `Accept: text/event-stream`, else a JSON array (`&wait_ms=` long-polls) |
//! | POST | /nodes | `{node_id, address}` |
//! | POST | /nodes/{id}/start, /nodes/{id}/stop | |
//! | POST | /tiers | `{node_id, tier_type, count}` |
//! | DELETE | /tiers/{id} | `?force=true` |
//! | POST | /network/save, /network/load | `{file}` |
//! | POST | /faults | `{kill_node}` or `{kill_worker}` or `{kill_broker}` |
//! | POST | /pipeline/process | raw document bytes, `?doc_id=` |
//! | POST | /commands | `{line}` in the command language |
//!
//! Errors come back as `{code, message}` with a matching status.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use eduction_runtime::{Event, TierType};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use crate::command::{parse_command, Command};
use crate::error::MgmtError;
use crate::manager::{parse_state, Fault, Manager};

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl IntoResponse for MgmtError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = ErrorBody {
            code: self.code().to_owned(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type Shared = State<Arc<Manager>>;
type Reply = Result<Response, MgmtError>;

/// Runs blocking manager work off the async workers.
async fn blocking<T, F>(m: Arc<Manager>, f: F) -> Reply
where
    T: Serialize + Send + 'static,
    F: FnOnce(&Manager) -> Result<T, MgmtError> + Send + 'static,
{
    let out = tokio::task::spawn_blocking(move || f(&m))
        .await
        .map_err(|e| MgmtError::Remote(e.to_string()))??;
    Ok(Json(out).into_response())
}

#[derive(Deserialize)]
struct NewNode {
    node_id: String,
    address: String,
}

#[derive(Deserialize)]
struct NewTiers {
    node_id: String,
    tier_type: TierType,
    #[serde(default = "one")]
    count: u32,
}

fn one() -> u32 {
    1
}

#[derive(Deserialize)]
struct ForceQuery {
    #[serde(default)]
    force: bool,
}

#[derive(Deserialize)]
struct FileBody {
    file: String,
}

#[derive(Deserialize)]
struct LineBody {
    line: String,
}

#[derive(Deserialize)]
struct StateQuery {
    state: Option<String>,
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: u64,
    wait_ms: Option<u64>,
}

#[derive(Deserialize)]
struct DocQuery {
    doc_id: String,
}

pub fn router(manager: Arc<Manager>) -> Router {
    Router::new()
        .route("/topology", get(topology))
        .route("/demands", get(demands))
        .route("/events", get(events))
        .route("/nodes", post(register_node))
        .route("/nodes/:id/start", post(start_node))
        .route("/nodes/:id/stop", post(stop_node))
        .route("/tiers", post(allocate))
        .route("/tiers/:id", delete(deallocate))
        .route("/network/save", post(save))
        .route("/network/load", post(load))
        .route("/faults", post(fault))
        .route("/pipeline/process", post(process))
        .route("/commands", post(command))
        .with_state(manager)
}

async fn topology(State(m): Shared) -> Reply {
    Ok(Json(m.cluster().gmt().snapshot()).into_response())
}

async fn demands(State(m): Shared, Query(q): Query<StateQuery>) -> Reply {
    let state = q.state.as_deref().map(parse_state).transpose()?;
    Ok(Json(m.demands(state)).into_response())
}

async fn register_node(State(m): Shared, Json(b): Json<NewNode>) -> Reply {
    blocking(m, move |m| m.register_node(&b.node_id, &b.address)).await
}

async fn start_node(State(m): Shared, Path(id): Path<String>) -> Reply {
    blocking(m, move |m| m.execute(&Command::StartNode { node_id: id })).await
}

async fn stop_node(State(m): Shared, Path(id): Path<String>) -> Reply {
    blocking(m, move |m| m.execute(&Command::StopNode { node_id: id })).await
}

async fn allocate(State(m): Shared, Json(b): Json<NewTiers>) -> Reply {
    blocking(m, move |m| {
        m.execute(&Command::Allocate {
            node_id: b.node_id,
            tier_type: b.tier_type,
            count: b.count,
        })
    })
    .await
}

async fn deallocate(State(m): Shared, Path(id): Path<String>, Query(q): Query<ForceQuery>) -> Reply {
    blocking(m, move |m| m.deallocate_tier(&id, q.force)).await
}

async fn save(State(m): Shared, Json(b): Json<FileBody>) -> Reply {
    blocking(m, move |m| m.execute(&Command::SaveNetwork { file: b.file })).await
}

async fn load(State(m): Shared, Json(b): Json<FileBody>) -> Reply {
    blocking(m, move |m| m.execute(&Command::LoadNetwork { file: b.file })).await
}

async fn fault(State(m): Shared, Json(f): Json<Fault>) -> Reply {
    blocking(m, move |m| m.inject(&f)).await
}

async fn process(State(m): Shared, Query(q): Query<DocQuery>, body: Bytes) -> Reply {
    blocking(m, move |m| m.process_document(&q.doc_id, &body)).await
}

async fn command(State(m): Shared, Json(b): Json<LineBody>) -> Reply {
    let cmd = parse_command(&b.line)?;
    blocking(m, move |m| m.execute(&cmd)).await
}

async fn events(State(m): Shared, headers: HeaderMap, Query(q): Query<EventsQuery>) -> Reply {
    let bus = m.cluster().events().clone();
    let wants_stream = headers
        .get("accept")
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/event-stream"));
    if !wants_stream {
        let wait = Duration::from_millis(q.wait_ms.unwrap_or(0).min(30_000));
        let list = tokio::task::spawn_blocking(move || {
            if wait.is_zero() {
                bus.since(q.since)
            } else {
                bus.wait_since(q.since, wait)
            }
        })
        .await
        .map_err(|e| MgmtError::Remote(e.to_string()))?;
        return Ok(Json(list).into_response());
    }
    // a reconnecting client resumes after the last id it saw
    let since = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse().ok())
        .unwrap_or(q.since);
    let (tx, rx) = tokio::sync::mpsc::channel::<Event>(256);
    std::thread::spawn(move || {
        let mut last = since;
        while !tx.is_closed() {
            for e in bus.wait_since(last, Duration::from_millis(250)) {
                last = e.seq;
                if tx.blocking_send(e).is_err() {
                    return;
                }
            }
        }
    });
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        let e = rx.recv().await?;
        let sse = SseEvent::default()
            .id(e.seq.to_string())
            .event(e.kind.name())
            .json_data(&e)
            .unwrap_or_else(|_| SseEvent::default().comment("unserializable event"));
        Some((Ok::<_, Infallible>(sse), rx))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()).into_response())
}

/// A running service; dropping it shuts the listener down.
pub struct ServiceHandle {
    pub address: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl std::fmt::Debug for ServiceHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServiceHandle").field("address", &self.address).finish()
    }
}

impl ServiceHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.address)
    }

    /// Blocks until the service stops.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds `address` (port 0 picks a free one) and serves on a background runtime.
pub fn serve(manager: Arc<Manager>, address: &str) -> Result<ServiceHandle, MgmtError> {
    let bind_err = |e: std::io::Error| MgmtError::BindFailure {
        address: address.to_owned(),
        message: e.to_string(),
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .map_err(bind_err)?;
    let std_listener = std::net::TcpListener::bind(address).map_err(bind_err)?;
    std_listener.set_nonblocking(true).map_err(bind_err)?;
    let local = std_listener.local_addr().map_err(bind_err)?;
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let app = router(manager);
    let thread = std::thread::Builder::new()
        .name("mgmt-http".into())
        .spawn(move || {
            runtime.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(std_listener) {
                    Ok(l) => l,
                    Err(e) => {
                        log::error!("management listener: {e}");
                        return;
                    }
                };
                // open event streams would hold a graceful shutdown forever
                tokio::select! {
                    r = axum::serve(listener, app) => {
                        if let Err(e) = r {
                            log::error!("management service: {e}");
                        }
                    }
                    _ = stop_rx => {}
                }
            });
            runtime.shutdown_timeout(Duration::from_millis(200));
        })
        .map_err(bind_err)?;
    Ok(ServiceHandle {
        address: local,
        stop: Some(stop_tx),
        thread: Some(thread),
    })
}
