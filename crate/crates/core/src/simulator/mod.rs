//! Synthetic camera fleet served over HTTP.
//!
//! Every camera is reachable on one shared listener:
//!
//! * `GET /cam/{tvid}/frame`: a single JPEG image,
//! * `GET /cam/{tvid}/stream`: `multipart/x-mixed-replace` JPEG stream,
//! * `POST /admin/scene` with `{"tvid": .., "scene": "flood"}`,
//! * `POST /admin/fault` with `{"tvid": .., "fault": "no_connect"}`.
//!
//! Each frame carries a [`SceneTag`] in a JPEG comment segment and a class
//! color band over its top rows.

pub mod render;
pub mod scenario;

use std::collections::{HashMap, HashSet};
use std::convert::Infallible;
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use bytes::Bytes;
use futures::stream;
use http_body_util::combinators::BoxBody;
use http_body_util::{BodyExt, Full, StreamBody};
use hyper::body::{Frame, Incoming};
use hyper::header::{CONTENT_LENGTH, CONTENT_TYPE};
use hyper::server::conn::http1;
use hyper::service::service_fn;
use hyper::{Method, Request, Response, StatusCode};
use hyper_util::rt::TokioIo;
use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use rayon::prelude::*;
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::{watch, OnceCell};

pub use scenario::{reference_scenario, Fault, SimCamera, SimScenario};

use crate::registry::{CameraRegistry, Codec, RegistryError};
use crate::scene::{SceneClass, SceneTag};

/// Multipart boundary used by stream endpoints.
pub const BOUNDARY: &str = "floodwatch";

const PATH_SEGMENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.').remove(b'~');
const NOISE_SEED: u64 = 0x5eed;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("cannot bind simulator listener: {0}")]
    Spawn(#[from] io::Error),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("no simulated camera `{0}`")]
    NotFound(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endpoint {
    pub tvid: String,
    pub url: String,
}

#[derive(Debug, Clone, Copy)]
struct SlotState {
    scene: SceneClass,
    fault: Fault,
}

struct CameraSlot {
    state: Mutex<SlotState>,
    sequence: AtomicU64,
    resolution: (u32, u32),
}

impl CameraSlot {
    fn snapshot(&self) -> SlotState {
        *self.state.lock().expect("camera slot poisoned")
    }

    fn next_sequence(&self) -> u64 {
        self.sequence.fetch_add(1, Ordering::Relaxed) + 1
    }
}

type FrameKey = (SceneClass, u32, u32, bool);

#[derive(Default)]
struct FrameCache {
    cells: Mutex<HashMap<FrameKey, Arc<OnceCell<Bytes>>>>,
}

impl FrameCache {
    async fn get(&self, key: FrameKey) -> Bytes {
        let cell = self
            .cells
            .lock()
            .expect("frame cache poisoned")
            .entry(key)
            .or_default()
            .clone();
        cell.get_or_init(|| async move {
            let (class, w, h, noise) = key;
            tokio::task::spawn_blocking(move || Bytes::from(render::render_frame(class, w, h, noise, NOISE_SEED)))
                .await
                .expect("render task panicked")
        })
        .await
        .clone()
    }

    fn fill(&self, rendered: Vec<(FrameKey, Bytes)>) {
        let mut cells = self.cells.lock().expect("frame cache poisoned");
        for (key, bytes) in rendered {
            cells.insert(key, Arc::new(OnceCell::new_with(Some(bytes))));
        }
    }
}

struct FleetInner {
    addr: SocketAddr,
    order: Vec<String>,
    codecs: Vec<Codec>,
    cameras: HashMap<String, Arc<CameraSlot>>,
    frames: FrameCache,
    frame_interval: Duration,
    latency: Duration,
    active_connections: AtomicUsize,
    peak_connections: AtomicUsize,
    shutdown: watch::Sender<bool>,
}

/// Control handle of a running fleet.
#[derive(Clone)]
pub struct FleetHandle {
    inner: Arc<FleetInner>,
}

/// Starts serving `scenario` on an ephemeral local port.
///
/// Returns one endpoint per camera, in scenario order. Cameras with a `JPEG`
/// codec (or none) get their `/frame` URL, the rest their `/stream` URL.
pub async fn spawn_fleet(scenario: &SimScenario) -> Result<(Vec<Endpoint>, FleetHandle), SimError> {
    spawn_fleet_on(scenario, "127.0.0.1:0".parse().expect("literal addr")).await
}

pub async fn spawn_fleet_on(
    scenario: &SimScenario,
    bind: SocketAddr,
) -> Result<(Vec<Endpoint>, FleetHandle), SimError> {
    let mut seen = HashSet::new();
    for cam in &scenario.cameras {
        if !seen.insert(cam.tvid.as_str()) {
            return Err(SimError::Scenario(format!("duplicate camera `{}`", cam.tvid)));
        }
        let (w, h) = scenario.resolution_of(cam);
        if w == 0 || h == 0 {
            return Err(SimError::Scenario(format!("camera `{}` has empty frame size", cam.tvid)));
        }
    }

    let listener = TcpListener::bind(bind).await?;
    let addr = listener.local_addr()?;
    let (shutdown, shutdown_rx) = watch::channel(false);

    let cameras = scenario
        .cameras
        .iter()
        .map(|cam| {
            let slot = CameraSlot {
                state: Mutex::new(SlotState {
                    scene: cam.scene,
                    fault: cam.fault,
                }),
                sequence: AtomicU64::new(0),
                resolution: scenario.resolution_of(cam),
            };
            (cam.tvid.clone(), Arc::new(slot))
        })
        .collect();

    let mut keys: Vec<FrameKey> = scenario
        .cameras
        .iter()
        .map(|cam| {
            let (w, h) = scenario.resolution_of(cam);
            (cam.scene, w, h, cam.fault == Fault::Noise)
        })
        .collect();
    keys.sort_by_key(|k| (k.0, k.1, k.2, k.3));
    keys.dedup();
    let rendered = tokio::task::spawn_blocking(move || {
        keys.into_par_iter()
            .map(|(c, w, h, n)| ((c, w, h, n), Bytes::from(render::render_frame(c, w, h, n, NOISE_SEED))))
            .collect::<Vec<_>>()
    })
    .await
    .expect("render task panicked");
    let frames = FrameCache::default();
    frames.fill(rendered);

    let inner = Arc::new(FleetInner {
        addr,
        order: scenario.cameras.iter().map(|c| c.tvid.clone()).collect(),
        codecs: scenario.cameras.iter().map(|c| c.serving()).collect(),
        cameras,
        frames,
        frame_interval: scenario.frame_interval(),
        latency: Duration::from_millis(scenario.latency_ms),
        active_connections: AtomicUsize::new(0),
        peak_connections: AtomicUsize::new(0),
        shutdown,
    });

    tokio::spawn(accept_loop(listener, inner.clone(), shutdown_rx));
    let handle = FleetHandle { inner };
    Ok((handle.endpoints(), handle))
}

async fn accept_loop(listener: TcpListener, inner: Arc<FleetInner>, mut shutdown: watch::Receiver<bool>) {
    loop {
        let stream = tokio::select! {
            _ = shutdown.changed() => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, _)) => stream,
                Err(e) => {
                    tracing::warn!("simulator accept failed: {e}");
                    tokio::time::sleep(Duration::from_millis(10)).await;
                    continue;
                }
            },
        };
        let _ = stream.set_nodelay(true);
        let inner = inner.clone();
        let mut conn_shutdown = shutdown.clone();
        tokio::spawn(async move {
            let now = inner.active_connections.fetch_add(1, Ordering::SeqCst) + 1;
            inner.peak_connections.fetch_max(now, Ordering::SeqCst);
            let svc_inner = inner.clone();
            let conn = http1::Builder::new().serve_connection(
                TokioIo::new(stream),
                service_fn(move |req| handle(svc_inner.clone(), req)),
            );
            tokio::select! {
                _ = conn => {}
                _ = conn_shutdown.changed() => {}
            }
            inner.active_connections.fetch_sub(1, Ordering::SeqCst);
        });
    }
}

impl FleetHandle {
    pub fn addr(&self) -> SocketAddr {
        self.inner.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.inner.addr)
    }

    pub fn frame_url(&self, tvid: &str) -> String {
        format!("{}/cam/{}/frame", self.base_url(), utf8_percent_encode(tvid, PATH_SEGMENT))
    }

    pub fn stream_url(&self, tvid: &str) -> String {
        format!("{}/cam/{}/stream", self.base_url(), utf8_percent_encode(tvid, PATH_SEGMENT))
    }

    pub fn endpoints(&self) -> Vec<Endpoint> {
        self.inner
            .order
            .iter()
            .zip(&self.inner.codecs)
            .map(|(tvid, codec)| Endpoint {
                tvid: tvid.clone(),
                url: if codec.is_stream() {
                    self.stream_url(tvid)
                } else {
                    self.frame_url(tvid)
                },
            })
            .collect()
    }

    /// Registry of the running fleet, pointing every camera at its endpoint.
    pub fn registry(&self, scenario: &SimScenario) -> Result<CameraRegistry, RegistryError> {
        let urls: Vec<String> = self.endpoints().into_iter().map(|e| e.url).collect();
        scenario.registry(&urls)
    }

    fn slot(&self, tvid: &str) -> Result<&Arc<CameraSlot>, SimError> {
        self.inner
            .cameras
            .get(tvid)
            .ok_or_else(|| SimError::NotFound(tvid.to_string()))
    }

    pub fn set_scene(&self, tvid: &str, scene: SceneClass) -> Result<(), SimError> {
        self.slot(tvid)?.state.lock().expect("camera slot poisoned").scene = scene;
        Ok(())
    }

    pub fn inject_fault(&self, tvid: &str, fault: Fault) -> Result<(), SimError> {
        self.slot(tvid)?.state.lock().expect("camera slot poisoned").fault = fault;
        Ok(())
    }

    pub fn scene(&self, tvid: &str) -> Result<SceneClass, SimError> {
        Ok(self.slot(tvid)?.snapshot().scene)
    }

    pub fn fault(&self, tvid: &str) -> Result<Fault, SimError> {
        Ok(self.slot(tvid)?.snapshot().fault)
    }

    pub fn active_connections(&self) -> usize {
        self.inner.active_connections.load(Ordering::SeqCst)
    }

    pub fn peak_connections(&self) -> usize {
        self.inner.peak_connections.load(Ordering::SeqCst)
    }

    /// Stops accepting and drops every open connection.
    pub fn shutdown(&self) {
        let _ = self.inner.shutdown.send(true);
    }
}

type Body = BoxBody<Bytes, io::Error>;
type HandlerError = Box<dyn std::error::Error + Send + Sync>;

/// Returned from the service to make hyper drop the connection unanswered.
#[derive(Debug, thiserror::Error)]
#[error("simulated connection failure")]
struct DropConnection;

fn full(status: StatusCode, content_type: &str, body: impl Into<Bytes>) -> Response<Body> {
    Response::builder()
        .status(status)
        .header(CONTENT_TYPE, content_type)
        .body(Full::new(body.into()).map_err(|e: Infallible| match e {}).boxed())
        .expect("static response parts")
}

fn text(status: StatusCode, msg: impl Into<String>) -> Response<Body> {
    full(status, "text/plain; charset=utf-8", msg.into())
}

async fn handle(inner: Arc<FleetInner>, req: Request<Incoming>) -> Result<Response<Body>, HandlerError> {
    let path = req.uri().path().to_string();
    let segments: Vec<&str> = path.trim_start_matches('/').split('/').collect();
    match (req.method(), segments.as_slice()) {
        (&Method::GET, ["healthz"]) => Ok(text(StatusCode::OK, "ok")),
        (&Method::GET, ["cam", tvid, kind @ ("frame" | "stream")]) => {
            let tvid = percent_decode_str(tvid).decode_utf8_lossy().into_owned();
            let Some(slot) = inner.cameras.get(&tvid).cloned() else {
                return Ok(text(StatusCode::NOT_FOUND, format!("no camera {tvid}")));
            };
            serve_camera(inner, tvid, slot, *kind == "stream").await
        }
        (&Method::POST, ["admin", action @ ("scene" | "fault")]) => {
            let action = action.to_string();
            let body = req.into_body().collect().await?.to_bytes();
            Ok(admin(&inner, &action, &body))
        }
        _ => Ok(text(StatusCode::NOT_FOUND, "not found")),
    }
}

#[derive(Deserialize)]
struct SceneCommand {
    tvid: String,
    scene: SceneClass,
}

#[derive(Deserialize)]
struct FaultCommand {
    tvid: String,
    fault: Fault,
}

fn admin(inner: &Arc<FleetInner>, action: &str, body: &[u8]) -> Response<Body> {
    let handle = FleetHandle { inner: inner.clone() };
    let result = match action {
        "scene" => serde_json::from_slice::<SceneCommand>(body)
            .map_err(|e| e.to_string())
            .map(|c| handle.set_scene(&c.tvid, c.scene)),
        _ => serde_json::from_slice::<FaultCommand>(body)
            .map_err(|e| e.to_string())
            .map(|c| handle.inject_fault(&c.tvid, c.fault)),
    };
    match result {
        Err(msg) => text(StatusCode::BAD_REQUEST, msg),
        Ok(Err(e)) => text(StatusCode::NOT_FOUND, e.to_string()),
        Ok(Ok(())) => full(StatusCode::OK, "application/json", r#"{"ok":true}"#),
    }
}

/// Renders the next tagged frame for a camera; also reports the fault in
/// force when the frame was taken.
async fn next_frame(inner: &FleetInner, tvid: &str, slot: &CameraSlot) -> (Bytes, Fault) {
    let state = slot.snapshot();
    let (w, h) = slot.resolution;
    let base = inner.frames.get((state.scene, w, h, state.fault == Fault::Noise)).await;
    let tag = SceneTag {
        class: state.scene,
        tvid: tvid.to_string(),
        sequence: slot.next_sequence(),
    };
    (Bytes::from(render::tag_frame(&base, &tag)), state.fault)
}

fn truncated_error() -> io::Error {
    io::Error::new(io::ErrorKind::ConnectionAborted, "simulated truncation")
}

type FrameStream = std::pin::Pin<Box<dyn futures::Stream<Item = Result<Frame<Bytes>, io::Error>> + Send + Sync>>;

/// Sends `head`, then aborts the connection. The pause lets hyper flush
/// `head` before the error tears the connection down.
fn cut_after(head: Bytes) -> FrameStream {
    use futures::StreamExt;
    Box::pin(stream::iter(vec![Ok(Frame::data(head))]).chain(stream::once(async {
        tokio::time::sleep(Duration::from_millis(50)).await;
        Err(truncated_error())
    })))
}

async fn serve_camera(
    inner: Arc<FleetInner>,
    tvid: String,
    slot: Arc<CameraSlot>,
    streaming: bool,
) -> Result<Response<Body>, HandlerError> {
    if !inner.latency.is_zero() {
        tokio::time::sleep(inner.latency).await;
    }
    match slot.snapshot().fault {
        Fault::NoConnect => return Err(Box::new(DropConnection)),
        Fault::Stall(secs) => tokio::time::sleep(Duration::from_secs_f64(secs)).await,
        _ => {}
    }

    if !streaming {
        let (bytes, fault) = next_frame(&inner, &tvid, &slot).await;
        let len = bytes.len();
        if fault == Fault::TruncatedFrame {
            let half = bytes.slice(..len / 2);
            let body = BodyExt::boxed(StreamBody::new(cut_after(half)));
            return Ok(Response::builder()
                .header(CONTENT_TYPE, "image/jpeg")
                .header(CONTENT_LENGTH, len)
                .body(body)?);
        }
        return Ok(full(StatusCode::OK, "image/jpeg", bytes));
    }

    // Multipart stream: one part per frame interval until the client leaves
    // or a truncation fault cuts it.
    let interval = inner.frame_interval;
    let parts = stream::unfold((inner, tvid, slot, 0u64, false), move |(inner, tvid, slot, n, done)| async move {
        if done {
            return None;
        }
        if n > 0 {
            tokio::time::sleep(interval).await;
        }
        let (bytes, fault) = next_frame(&inner, &tvid, &slot).await;
        let header = format!(
            "--{BOUNDARY}\r\nContent-Type: image/jpeg\r\nContent-Length: {}\r\n\r\n",
            bytes.len()
        );
        let mut part = Vec::with_capacity(header.len() + bytes.len() + 2);
        part.extend_from_slice(header.as_bytes());
        if fault == Fault::TruncatedFrame {
            part.extend_from_slice(&bytes[..bytes.len() / 2]);
            return Some((cut_after(Bytes::from(part)), (inner, tvid, slot, n + 1, true)));
        }
        part.extend_from_slice(&bytes);
        part.extend_from_slice(b"\r\n");
        let whole: FrameStream = Box::pin(stream::iter(vec![Ok(Frame::data(Bytes::from(part)))]));
        Some((whole, (inner, tvid, slot, n + 1, false)))
    });
    use futures::StreamExt;
    let body = BodyExt::boxed(StreamBody::new(parts.flatten()));
    Ok(Response::builder()
        .header(CONTENT_TYPE, format!("multipart/x-mixed-replace; boundary={BOUNDARY}"))
        .body(body)?)
}
