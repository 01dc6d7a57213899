//! Capture rounds: one frame from every registered camera, fetched in
//! parallel by a bounded worker pool under a per-stream deadline.

pub mod multipart;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use reqwest::header::CONTENT_TYPE;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tokio::task::JoinSet;

use crate::frame::{self, EncodedFrame};
use crate::registry::{CameraRecord, CameraRegistry};
use multipart::{FirstPartReader, Unfinished};

/// Teardown allowance on top of the per-stream deadline.
pub const DEADLINE_GRACE: Duration = Duration::from_secs(2);
/// Frames larger than this are abandoned.
pub const MAX_FRAME_BYTES: usize = 32 << 20;

#[derive(Debug, thiserror::Error)]
pub enum CaptureConfigError {
    #[error("pool size must be at least 1")]
    EmptyPool,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureConfig {
    pub pool_size: usize,
    #[serde(with = "secs")]
    pub per_stream_deadline: Duration,
    /// Target capture time for one camera network.
    #[serde(with = "secs")]
    pub network_budget: Duration,
    /// Target time for a full round, capture to notification.
    #[serde(with = "secs")]
    pub round_budget: Duration,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            pool_size: 256,
            per_stream_deadline: Duration::from_secs(15),
            network_budget: Duration::from_secs(60),
            round_budget: Duration::from_secs(300),
        }
    }
}

impl CaptureConfig {
    pub fn validate(&self) -> Result<(), CaptureConfigError> {
        if self.pool_size == 0 {
            return Err(CaptureConfigError::EmptyPool);
        }
        for (name, d) in [
            ("per_stream_deadline", self.per_stream_deadline),
            ("network_budget", self.network_budget),
            ("round_budget", self.round_budget),
        ] {
            if d.is_zero() {
                return Err(CaptureConfigError::NonPositive(name));
            }
        }
        Ok(())
    }

    pub fn with_pool(mut self, pool_size: usize) -> Self {
        self.pool_size = pool_size;
        self
    }

    pub fn with_deadline(mut self, deadline: Duration) -> Self {
        self.per_stream_deadline = deadline;
        self
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    ConnectError,
    Timeout,
    DecodeError,
    EmptyStream,
}

impl FailureKind {
    pub const ALL: [FailureKind; 4] = [
        FailureKind::ConnectError,
        FailureKind::Timeout,
        FailureKind::DecodeError,
        FailureKind::EmptyStream,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::ConnectError => "connect_error",
            FailureKind::Timeout => "timeout",
            FailureKind::DecodeError => "decode_error",
            FailureKind::EmptyStream => "empty_stream",
        }
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CaptureOutcome {
    /// Canonical JPEG frame.
    Frame(EncodedFrame),
    Failure { kind: FailureKind, detail: String },
}

impl CaptureOutcome {
    fn failure(kind: FailureKind, detail: impl Into<String>) -> Self {
        CaptureOutcome::Failure {
            kind,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureResult {
    pub tvid: String,
    pub outcome: CaptureOutcome,
    pub captured_at: DateTime<Utc>,
    pub elapsed: Duration,
}

impl CaptureResult {
    pub fn frame(&self) -> Option<&EncodedFrame> {
        match &self.outcome {
            CaptureOutcome::Frame(f) => Some(f),
            CaptureOutcome::Failure { .. } => None,
        }
    }

    pub fn failure_kind(&self) -> Option<FailureKind> {
        match &self.outcome {
            CaptureOutcome::Frame(_) => None,
            CaptureOutcome::Failure { kind, .. } => Some(*kind),
        }
    }

    pub fn is_frame(&self) -> bool {
        self.frame().is_some()
    }
}

#[derive(Debug, Clone)]
pub struct RoundResult {
    pub round_id: u64,
    /// One result per registry camera, in registry order.
    pub results: Vec<CaptureResult>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub wall: Duration,
    /// Time from round start until the last camera of each network finished.
    pub network_wall: Vec<(String, Duration)>,
}

impl RoundResult {
    pub fn get(&self, tvid: &str) -> Option<&CaptureResult> {
        self.results.iter().find(|r| r.tvid == tvid)
    }

    pub fn frames(&self) -> usize {
        self.results.iter().filter(|r| r.is_frame()).count()
    }

    pub fn failure_counts(&self) -> Vec<(FailureKind, usize)> {
        FailureKind::ALL
            .iter()
            .map(|k| (*k, self.results.iter().filter(|r| r.failure_kind() == Some(*k)).count()))
            .collect()
    }
}

/// HTTP client tuned for many short-lived camera fetches.
pub fn build_client(config: &CaptureConfig) -> reqwest::Client {
    reqwest::Client::builder()
        .no_proxy()
        .tcp_nodelay(true)
        .pool_max_idle_per_host(config.pool_size)
        .connect_timeout(config.per_stream_deadline)
        .build()
        .expect("static client configuration")
}

type Fetched = Result<Vec<u8>, (FailureKind, String)>;

async fn fetch(client: &reqwest::Client, url: &str) -> Fetched {
    let resp = client
        .get(url)
        .send()
        .await
        .map_err(|e| (FailureKind::ConnectError, error_chain(&e)))?;
    let status = resp.status();
    if !status.is_success() {
        return Err((FailureKind::ConnectError, format!("http {}", status.as_u16())));
    }
    let boundary = resp
        .headers()
        .get(CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .and_then(multipart::boundary_of);
    match boundary {
        Some(b) => first_part(resp, &b).await,
        None => whole_body(resp).await,
    }
}

async fn whole_body(mut resp: reqwest::Response) -> Fetched {
    let mut buf = Vec::new();
    loop {
        match resp.chunk().await {
            Ok(Some(chunk)) => {
                buf.extend_from_slice(&chunk);
                if buf.len() > MAX_FRAME_BYTES {
                    return Err((FailureKind::DecodeError, "frame exceeds size limit".into()));
                }
            }
            Ok(None) if buf.is_empty() => return Err((FailureKind::EmptyStream, "empty body".into())),
            Ok(None) => return Ok(buf),
            Err(e) if buf.is_empty() => return Err((FailureKind::ConnectError, error_chain(&e))),
            // Cut mid-frame: let the decoder judge what arrived.
            Err(_) => return Ok(buf),
        }
    }
}

async fn first_part(mut resp: reqwest::Response, boundary: &str) -> Fetched {
    let mut reader = FirstPartReader::new(boundary);
    loop {
        match resp.chunk().await {
            Ok(Some(chunk)) => {
                if let Some(part) = reader.push(&chunk) {
                    return if part.is_empty() {
                        Err((FailureKind::EmptyStream, "empty first part".into()))
                    } else {
                        Ok(part)
                    };
                }
                if reader.buffered() > MAX_FRAME_BYTES {
                    return Err((FailureKind::DecodeError, "no frame within size limit".into()));
                }
            }
            Ok(None) | Err(_) => {
                return match reader.finish() {
                    Unfinished::Partial(bytes) => Ok(bytes),
                    Unfinished::Nothing => Err((FailureKind::EmptyStream, "stream ended before a frame".into())),
                };
            }
        }
    }
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut src = e.source();
    while let Some(s) = src {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        src = s.source();
    }
    msg
}

/// Fetches and decodes one frame, re-encoded to canonical JPEG.
///
/// Never fails: every problem is reported as a [`CaptureOutcome::Failure`].
/// Fetching and decoding together are bounded by `deadline`.
pub async fn capture_one(client: &reqwest::Client, camera: &CameraRecord, deadline: Duration) -> CaptureResult {
    let captured_at = Utc::now();
    let start = Instant::now();
    let work = async {
        let raw = match fetch(client, &camera.url).await {
            Ok(raw) => raw,
            Err((kind, detail)) => return CaptureOutcome::failure(kind, detail),
        };
        let decoded = tokio::task::spawn_blocking(move || frame::canonicalize(&raw)).await;
        match decoded {
            Ok(Ok(f)) => CaptureOutcome::Frame(f),
            Ok(Err(e)) => CaptureOutcome::failure(FailureKind::DecodeError, e.to_string()),
            Err(e) => CaptureOutcome::failure(FailureKind::DecodeError, format!("decoder crashed: {e}")),
        }
    };
    let outcome = match tokio::time::timeout(deadline, work).await {
        Ok(outcome) => outcome,
        Err(_) => CaptureOutcome::failure(
            FailureKind::Timeout,
            format!("no frame within {:.1} s", deadline.as_secs_f64()),
        ),
    };
    CaptureResult {
        tvid: camera.tvid.clone(),
        outcome,
        captured_at,
        elapsed: start.elapsed(),
    }
}

/// Live count of captures in progress, with its high-water mark.
#[derive(Debug, Default)]
pub struct InFlight {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl InFlight {
    fn enter(&self) {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
    }

    fn leave(&self) {
        self.current.fetch_sub(1, Ordering::SeqCst);
    }

    pub fn current(&self) -> usize {
        self.current.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn reset_peak(&self) {
        self.peak.store(self.current(), Ordering::SeqCst);
    }
}

/// Runs capture rounds with a fixed configuration.
pub struct Ingestor {
    client: reqwest::Client,
    config: CaptureConfig,
    next_round: AtomicU64,
    in_flight: Arc<InFlight>,
}

impl Ingestor {
    pub fn new(config: CaptureConfig) -> Result<Self, CaptureConfigError> {
        config.validate()?;
        Ok(Self {
            client: build_client(&config),
            config,
            next_round: AtomicU64::new(1),
            in_flight: Arc::new(InFlight::default()),
        })
    }

    /// Continues round numbering after `last_round`.
    pub fn resume_after(self, last_round: u64) -> Self {
        self.next_round.store(last_round + 1, Ordering::SeqCst);
        self
    }

    pub fn config(&self) -> &CaptureConfig {
        &self.config
    }

    pub fn in_flight(&self) -> &InFlight {
        &self.in_flight
    }

    /// Captures every camera exactly once, at most `pool_size` at a time.
    pub async fn run_round(&self, registry: &CameraRegistry) -> RoundResult {
        let round_id = self.next_round.fetch_add(1, Ordering::SeqCst);
        let started_at = Utc::now();
        let start = Instant::now();
        let permits = Arc::new(Semaphore::new(self.config.pool_size));
        let mut tasks = JoinSet::new();
        for (idx, camera) in registry.records().iter().enumerate() {
            let permits = permits.clone();
            let client = self.client.clone();
            let camera = camera.clone();
            let deadline = self.config.per_stream_deadline;
            let in_flight = self.in_flight.clone();
            tasks.spawn(async move {
                let _permit = permits.acquire_owned().await.expect("semaphore never closed");
                in_flight.enter();
                let result = capture_one(&client, &camera, deadline).await;
                in_flight.leave();
                (idx, result, start.elapsed())
            });
        }

        let mut slots: Vec<Option<(CaptureResult, Duration)>> = vec![None; registry.len()];
        while let Some(joined) = tasks.join_next().await {
            match joined {
                Ok((idx, result, done)) => slots[idx] = Some((result, done)),
                Err(e) => tracing::error!("capture task failed: {e}"),
            }
        }

        let mut network_wall: Vec<(String, Duration)> = Vec::new();
        let results = registry
            .records()
            .iter()
            .zip(slots)
            .map(|(camera, slot)| {
                let (result, done) = slot.unwrap_or_else(|| {
                    let r = CaptureResult {
                        tvid: camera.tvid.clone(),
                        outcome: CaptureOutcome::failure(FailureKind::ConnectError, "capture task aborted"),
                        captured_at: started_at,
                        elapsed: Duration::ZERO,
                    };
                    (r, start.elapsed())
                });
                match network_wall.iter_mut().find(|(k, _)| *k == camera.network) {
                    Some((_, d)) => *d = (*d).max(done),
                    None => network_wall.push((camera.network.clone(), done)),
                }
                result
            })
            .collect();

        for (network, wall) in &network_wall {
            if *wall > self.config.network_budget {
                tracing::warn!(
                    "round {round_id}: network {network} took {:.1} s (budget {:.0} s)",
                    wall.as_secs_f64(),
                    self.config.network_budget.as_secs_f64()
                );
            }
        }

        RoundResult {
            round_id,
            results,
            started_at,
            finished_at: Utc::now(),
            wall: start.elapsed(),
            network_wall,
        }
    }
}

/// One row of a pool-size sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub pool_size: usize,
    pub wall: Duration,
    pub frames: usize,
    pub failures: usize,
    pub peak_in_flight: usize,
}

/// Times one full round per pool size.
pub async fn measure_pool_sweep(
    registry: &CameraRegistry,
    pool_sizes: &[usize],
    base: &CaptureConfig,
) -> Result<Vec<SweepRow>, CaptureConfigError> {
    let mut rows = Vec::with_capacity(pool_sizes.len());
    for &pool in pool_sizes {
        let ingestor = Ingestor::new(base.clone().with_pool(pool))?;
        let round = ingestor.run_round(registry).await;
        rows.push(SweepRow {
            pool_size: pool,
            wall: round.wall,
            frames: round.frames(),
            failures: round.results.len() - round.frames(),
            peak_in_flight: ingestor.in_flight().peak(),
        });
    }
    Ok(rows)
}

/// File name used for a camera's frames: the tvid with path-hostile
/// characters percent-encoded.
pub fn frame_file_name(tvid: &str) -> String {
    use percent_encoding::{utf8_percent_encode, AsciiSet, CONTROLS};
    const HOSTILE: &AsciiSet = &CONTROLS
        .add(b'/')
        .add(b'\\')
        .add(b'%')
        .add(b':')
        .add(b'*')
        .add(b'?')
        .add(b'"')
        .add(b'<')
        .add(b'>')
        .add(b'|');
    let name = utf8_percent_encode(tvid, HOSTILE).to_string();
    match name.as_str() {
        "." | ".." => format!("%2E{}.jpg", &name[1..]),
        _ => format!("{name}.jpg"),
    }
}

/// Path of a spooled frame relative to the spool root.
pub fn frame_ref(round_id: u64, tvid: &str) -> PathBuf {
    PathBuf::from(round_id.to_string()).join(frame_file_name(tvid))
}

/// Writes every captured frame to `{root}/{round_id}/{tvid}.jpg`.
///
/// Returns `(tvid, path relative to root)` for each frame written.
pub fn spool_round(round: &RoundResult, root: &Path) -> std::io::Result<Vec<(String, PathBuf)>> {
    let dir = root.join(round.round_id.to_string());
    std::fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    for r in &round.results {
        if let Some(f) = r.frame() {
            let rel = frame_ref(round.round_id, &r.tvid);
            std::fs::write(root.join(&rel), &f.bytes)?;
            written.push((r.tvid.clone(), rel));
        }
    }
    Ok(written)
}
