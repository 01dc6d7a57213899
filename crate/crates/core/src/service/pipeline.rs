//! One round end to end, and the scheduler that repeats it.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use bytes::Bytes;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;
use tokio::time::MissedTickBehavior;

use crate::classifier::{classify_batch, ClassifierBackend, ExternalClassifier, SceneLabel, StubClassifier};
use crate::detection::{self, DetectorBackend, DirectoryDetector, ExternalDetector};
use crate::ingest::{spool_round, CaptureConfigError, FailureKind, Ingestor, RoundResult};
use crate::mapper::{summary_report, update_map, MapError, MapState, SnapshotStore, StatusCounts, SummaryReport};
use crate::notifier::{Delivery, Notifier, NotifierError};
use crate::registry::{parse_registry, parse_registry_lenient, CameraRegistry, RegistryError};
use crate::scene::SceneClass;
use crate::water_level::{GradeOutcome, GradingConfig};

use super::config::{ClassifierChoice, DetectorChoice, PipelineConfig};

pub const METRICS_LOG: &str = "metrics.log";
/// Metrics entries kept in memory for the API.
const METRICS_HISTORY: usize = 1024;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("registry {path}: {source}")]
    Registry {
        path: PathBuf,
        #[source]
        source: RegistryError,
    },
    #[error("registry {path}: {source}")]
    RegistryRead {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Capture(#[from] CaptureConfigError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Notify(#[from] NotifierError),
    #[error("{what}: {source}")]
    Io {
        what: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(what: impl Into<String>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let what = what.into();
    move |source| PipelineError::Io { what, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round_id: u64,
    pub started_at: DateTime<Utc>,
    pub capture_wall_ms: u64,
    pub classify_wall_ms: u64,
    /// Water-level grading of flood cameras; zero without a detector.
    pub level_wall_ms: u64,
    pub map_wall_ms: u64,
    pub notify_wall_ms: u64,
    pub total_wall_ms: u64,
    pub frames: usize,
    pub failures: BTreeMap<FailureKind, usize>,
    pub statuses: StatusCounts,
    pub deliveries: usize,
}

fn ms(d: Duration) -> u64 {
    d.as_millis() as u64
}

/// The latest published round as served by the API.
#[derive(Debug, Clone)]
pub struct Published {
    pub state: MapState,
    pub report: SummaryReport,
    pub geojson: String,
}

impl Published {
    pub fn new(state: MapState, map_url: &str) -> Self {
        let report = summary_report(&state, map_url);
        let geojson = crate::mapper::to_geojson_string(&state);
        Self { state, report, geojson }
    }
}

/// State handed from the scheduler to API readers.
#[derive(Debug, Default)]
pub struct SharedState {
    latest: RwLock<Option<Arc<Published>>>,
    metrics: RwLock<Vec<RoundMetrics>>,
}

impl SharedState {
    pub fn latest(&self) -> Option<Arc<Published>> {
        self.latest.read().expect("state lock").clone()
    }

    pub fn publish(&self, p: Published) {
        *self.latest.write().expect("state lock") = Some(Arc::new(p));
    }

    pub fn metrics(&self) -> Vec<RoundMetrics> {
        self.metrics.read().expect("metrics lock").clone()
    }

    fn push_metrics(&self, m: RoundMetrics) {
        let mut v = self.metrics.write().expect("metrics lock");
        v.push(m);
        if v.len() > METRICS_HISTORY {
            let excess = v.len() - METRICS_HISTORY;
            v.drain(..excess);
        }
    }
}

/// Everything a single round produced.
#[derive(Debug)]
pub struct RoundOutcome {
    pub metrics: RoundMetrics,
    pub round: RoundResult,
    pub labels: HashMap<String, SceneLabel>,
    pub published: Arc<Published>,
    pub deliveries: Vec<Delivery>,
}

pub struct Pipeline {
    config: PipelineConfig,
    registry: Arc<CameraRegistry>,
    ingestor: Ingestor,
    classifier: Arc<dyn ClassifierBackend>,
    detector: Option<Arc<dyn DetectorBackend>>,
    store: SnapshotStore,
    notifier: Notifier,
    shared: Arc<SharedState>,
}

pub fn load_registry(path: &Path, lenient: bool) -> Result<CameraRegistry, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::RegistryRead {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed = if lenient {
        parse_registry_lenient(&text)
    } else {
        parse_registry(&text)
    };
    parsed.map_err(|source| PipelineError::Registry {
        path: path.to_path_buf(),
        source,
    })
}

impl Pipeline {
    /// Builds the backends named in the config.
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        let classifier: Arc<dyn ClassifierBackend> = match &config.classifier {
            ClassifierChoice::Stub => Arc::new(StubClassifier::default()),
            ClassifierChoice::External {
                socket,
                single_threaded,
            } => {
                let c = ExternalClassifier::new(socket);
                Arc::new(if *single_threaded { c.single_threaded() } else { c })
            }
        };
        let detector: Option<Arc<dyn DetectorBackend>> = match &config.detector {
            None => None,
            Some(DetectorChoice::External { socket }) => Some(Arc::new(ExternalDetector::new(socket))),
            Some(DetectorChoice::Directory { path }) => Some(Arc::new(DirectoryDetector::new(path))),
        };
        Self::with_backends(config, classifier, detector)
    }

    /// Loads the registry, reopens persisted state and resumes numbering
    /// after the last stored round.
    pub fn with_backends(
        config: PipelineConfig,
        classifier: Arc<dyn ClassifierBackend>,
        detector: Option<Arc<dyn DetectorBackend>>,
    ) -> Result<Self, PipelineError> {
        let registry = load_registry(&config.registry_path, config.lenient_registry)?;
        let store = SnapshotStore::open(config.rounds_dir(), config.retention)?;
        let notifier = Notifier::open(config.notification.clone(), &config.data_dir)?;
        let shared = Arc::new(SharedState::default());
        let mut ingestor = Ingestor::new(config.capture.clone())?;

        let mut last_round = 0;
        if let Some(state) = store.latest()? {
            last_round = state.round_id;
            tracing::info!(round = state.round_id, "serving persisted snapshot");
            shared.publish(Published::new(state, &config.map_url()));
        }
        for m in read_metrics(&config.data_dir.join(METRICS_LOG)) {
            last_round = last_round.max(m.round_id);
            shared.push_metrics(m);
        }
        if last_round > 0 {
            ingestor = ingestor.resume_after(last_round);
        }
        Ok(Self {
            config,
            registry: Arc::new(registry),
            ingestor,
            classifier,
            detector,
            store,
            notifier,
            shared,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn registry(&self) -> &CameraRegistry {
        &self.registry
    }

    pub fn shared(&self) -> Arc<SharedState> {
        self.shared.clone()
    }

    pub fn ingestor(&self) -> &Ingestor {
        &self.ingestor
    }

    /// capture → spool → classify → grade floods → map → persist → notify.
    pub async fn run_round_once(&self) -> Result<RoundOutcome, PipelineError> {
        let total = Instant::now();

        let round = self.ingestor.run_round(&self.registry).await;
        let capture_wall = total.elapsed();
        let round_id = round.round_id;

        let frames: Vec<(String, Bytes)> = round
            .results
            .iter()
            .filter_map(|r| r.frame().map(|f| (r.tvid.clone(), f.bytes.clone())))
            .collect();

        let t = Instant::now();
        let backend = self.classifier.clone();
        let spool_root = self.config.frames_dir();
        let spool_round_copy = round.clone();
        let (labels, spooled) = tokio::task::spawn_blocking(move || {
            let spooled = spool_round(&spool_round_copy, &spool_root);
            let bytes: Vec<&Bytes> = frames.iter().map(|(_, b)| b).collect();
            let labels = classify_batch(backend.as_ref(), &bytes);
            let labels: HashMap<String, SceneLabel> = frames
                .iter()
                .map(|(id, _)| id.clone())
                .zip(labels)
                .collect();
            (labels, spooled.map(|v| (v, frames)))
        })
        .await
        .expect("classification task panicked");
        let classify_wall = t.elapsed();
        let (spooled, frames) = spooled.map_err(io_err(format!("spooling round {round_id}")))?;
        let frame_refs: HashMap<String, String> = spooled
            .into_iter()
            .map(|(id, rel)| (id, Path::new("frames").join(rel).to_string_lossy().into_owned()))
            .collect();

        let t = Instant::now();
        let levels = match &self.detector {
            Some(det) => grade_floods(det.clone(), self.config.grading, &labels, frames).await,
            None => HashMap::new(),
        };
        let level_wall = t.elapsed();

        let t = Instant::now();
        let state = update_map(&self.registry, &round, &labels, &levels, &frame_refs, Utc::now())?;
        let store = self.store.clone();
        let to_save = state.clone();
        tokio::task::spawn_blocking(move || store.save(&to_save))
            .await
            .expect("snapshot task panicked")?;
        prune_frames(&self.config.frames_dir(), self.config.retention);
        let published = Arc::new(Published::new(state, &self.config.map_url()));
        *self.shared.latest.write().expect("state lock") = Some(published.clone());
        let map_wall = t.elapsed();

        let t = Instant::now();
        let deliveries = match self.notifier.process(&published.state, &self.config.map_url()).await {
            Ok(d) => d,
            Err(e) => {
                tracing::error!(round = round_id, "notification: {e}");
                vec![]
            }
        };
        let notify_wall = t.elapsed();

        let total_wall = total.elapsed();
        let metrics = RoundMetrics {
            round_id,
            started_at: round.started_at,
            capture_wall_ms: ms(capture_wall),
            classify_wall_ms: ms(classify_wall),
            level_wall_ms: ms(level_wall),
            map_wall_ms: ms(map_wall),
            notify_wall_ms: ms(notify_wall),
            total_wall_ms: ms(total_wall),
            frames: round.frames(),
            failures: round.failure_counts().into_iter().filter(|(_, n)| *n > 0).collect(),
            statuses: published.state.counts(),
            deliveries: deliveries.len(),
        };
        if total_wall > self.config.capture.round_budget {
            tracing::warn!(
                round = round_id,
                "round took {:.1} s (budget {:.0} s)",
                total_wall.as_secs_f64(),
                self.config.capture.round_budget.as_secs_f64()
            );
        }
        append_metrics(&self.config.data_dir.join(METRICS_LOG), &metrics);
        self.shared.push_metrics(metrics.clone());
        tracing::info!(
            round = round_id,
            total_ms = metrics.total_wall_ms,
            frames = metrics.frames,
            flood = metrics.statuses.flood,
            no_video = metrics.statuses.no_video,
            "round complete"
        );

        Ok(RoundOutcome {
            metrics,
            round,
            labels,
            published,
            deliveries,
        })
    }

    /// Runs rounds on a fixed tick until `shutdown` turns true. A round that
    /// overruns its interval delays the next one; missed ticks are dropped.
    /// The round in progress at shutdown is allowed to finish.
    pub async fn run(&self, mut shutdown: watch::Receiver<bool>) {
        let mut ticker = tokio::time::interval(self.config.interval());
        ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
        loop {
            if *shutdown.borrow() {
                break;
            }
            tokio::select! {
                _ = ticker.tick() => {}
                _ = shutdown.changed() => break,
            }
            if let Err(e) = self.run_round_once().await {
                tracing::error!("round failed: {e}");
            }
        }
    }
}

async fn grade_floods(
    detector: Arc<dyn DetectorBackend>,
    grading: GradingConfig,
    labels: &HashMap<String, SceneLabel>,
    frames: Vec<(String, Bytes)>,
) -> HashMap<String, GradeOutcome> {
    let floods: Vec<(String, Bytes)> = frames
        .into_iter()
        .filter(|(id, _)| labels.get(id).is_some_and(|l| l.label == SceneClass::Flood))
        .collect();
    if floods.is_empty() {
        return HashMap::new();
    }
    tokio::task::spawn_blocking(move || {
        floods
            .iter()
            .filter_map(|(id, bytes)| match detection::estimate(detector.as_ref(), id, bytes, &grading) {
                Ok(Some(g)) => Some((id.clone(), g)),
                Ok(None) => None,
                Err(e) => {
                    tracing::warn!(tvid = %id, "water level: {e}");
                    None
                }
            })
            .collect()
    })
    .await
    .expect("grading task panicked")
}

/// Keeps the newest `retention` per-round frame directories.
fn prune_frames(root: &Path, retention: usize) {
    let Ok(entries) = std::fs::read_dir(root) else {
        return;
    };
    let mut ids: Vec<u64> = entries
        .filter_map(|e| e.ok()?.file_name().into_string().ok()?.parse().ok())
        .collect();
    if ids.len() <= retention {
        return;
    }
    ids.sort_unstable();
    for id in &ids[..ids.len() - retention] {
        let _ = std::fs::remove_dir_all(root.join(id.to_string()));
    }
}

fn append_metrics(path: &Path, m: &RoundMetrics) {
    let line = serde_json::to_string(m).expect("metrics serialize");
    let res = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .and_then(|mut f| writeln!(f, "{line}"));
    if let Err(e) = res {
        tracing::warn!("metrics log {}: {e}", path.display());
    }
}

pub fn read_metrics(path: &Path) -> Vec<RoundMetrics> {
    std::fs::read_to_string(path)
        .map(|t| t.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
        .unwrap_or_default()
}
