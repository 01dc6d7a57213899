//! Geo-referenced flood map: per-round camera statuses, GeoJSON rendering,
//! the flood-only summary report and round snapshots on disk.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classifier::{ClassProbabilities, SceneLabel};
use crate::ingest::{CaptureOutcome, FailureKind, RoundResult};
use crate::registry::CameraRegistry;
use crate::scene::SceneClass;
use crate::water_level::GradeOutcome;

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("no scene label for successfully captured camera `{0}`")]
    MissingLabel(String),
    #[error("round covers camera `{0}` which is not in the registry")]
    UnknownCamera(String),
    #[error("round has {got} results for {expected} registered cameras")]
    Incomplete { expected: usize, got: usize },
    #[error("invalid map document: {0}")]
    Document(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Marker state of one camera on the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusColor {
    Flood,
    Normal,
    Unknown,
    NoVideo,
}

impl StatusColor {
    pub fn color(self) -> &'static str {
        match self {
            StatusColor::Flood => "red",
            StatusColor::Normal => "green",
            StatusColor::Unknown => "gray",
            StatusColor::NoVideo => "white",
        }
    }
}

impl From<SceneClass> for StatusColor {
    fn from(c: SceneClass) -> Self {
        match c {
            SceneClass::Normal => StatusColor::Normal,
            SceneClass::Flood => StatusColor::Flood,
            SceneClass::Unknown => StatusColor::Unknown,
        }
    }
}

impl fmt::Display for StatusColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.color())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraStatus {
    pub tvid: String,
    pub longitude: f64,
    pub latitude: f64,
    pub roadsection: String,
    pub status: StatusColor,
    pub probabilities: Option<ClassProbabilities>,
    pub water_level: Option<GradeOutcome>,
    pub observed_at: DateTime<Utc>,
    pub frame_ref: Option<String>,
    /// Capture failure kind behind a `NoVideo` status.
    pub failure: Option<FailureKind>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub flood: usize,
    pub normal: usize,
    pub unknown: usize,
    pub no_video: usize,
}

impl StatusCounts {
    pub fn total(&self) -> usize {
        self.flood + self.normal + self.unknown + self.no_video
    }
}

/// The complete map for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct MapState {
    pub round_id: u64,
    pub capture_started_at: DateTime<Utc>,
    pub generated_at: DateTime<Utc>,
    /// One status per registered camera, in registry order.
    pub cameras: Vec<CameraStatus>,
}

impl MapState {
    pub fn camera(&self, tvid: &str) -> Option<&CameraStatus> {
        self.cameras.iter().find(|c| c.tvid == tvid)
    }

    pub fn counts(&self) -> StatusCounts {
        let mut n = StatusCounts::default();
        for c in &self.cameras {
            match c.status {
                StatusColor::Flood => n.flood += 1,
                StatusColor::Normal => n.normal += 1,
                StatusColor::Unknown => n.unknown += 1,
                StatusColor::NoVideo => n.no_video += 1,
            }
        }
        n
    }

    pub fn flood_ids(&self) -> Vec<&str> {
        self.cameras
            .iter()
            .filter(|c| c.status == StatusColor::Flood)
            .map(|c| c.tvid.as_str())
            .collect()
    }
}

/// Folds one round into a fresh map.
///
/// Failed captures become `NoVideo`; every other camera takes the status of
/// its scene label. Water-level readings and frame references are attached
/// where given.
pub fn update_map(
    registry: &CameraRegistry,
    round: &RoundResult,
    labels: &HashMap<String, SceneLabel>,
    levels: &HashMap<String, GradeOutcome>,
    frame_refs: &HashMap<String, String>,
    generated_at: DateTime<Utc>,
) -> Result<MapState, MapError> {
    if round.results.len() != registry.len() {
        return Err(MapError::Incomplete {
            expected: registry.len(),
            got: round.results.len(),
        });
    }
    let cameras = round
        .results
        .iter()
        .map(|r| {
            let rec = registry
                .lookup(&r.tvid)
                .ok_or_else(|| MapError::UnknownCamera(r.tvid.clone()))?;
            let (status, probabilities, failure) = match &r.outcome {
                CaptureOutcome::Failure { kind, .. } => (StatusColor::NoVideo, None, Some(*kind)),
                CaptureOutcome::Frame(_) => {
                    let label = labels
                        .get(&r.tvid)
                        .ok_or_else(|| MapError::MissingLabel(r.tvid.clone()))?;
                    (label.label.into(), Some(label.probabilities), None)
                }
            };
            Ok(CameraStatus {
                tvid: r.tvid.clone(),
                longitude: rec.longitude,
                latitude: rec.latitude,
                roadsection: rec.roadsection.clone(),
                status,
                probabilities,
                water_level: if failure.is_none() { levels.get(&r.tvid).copied() } else { None },
                observed_at: r.captured_at,
                frame_ref: if failure.is_none() { frame_refs.get(&r.tvid).cloned() } else { None },
                failure,
            })
        })
        .collect::<Result<Vec<_>, MapError>>()?;
    Ok(MapState {
        round_id: round.round_id,
        capture_started_at: round.started_at,
        generated_at,
        cameras,
    })
}

// GeoJSON wire types. Round metadata rides as foreign members of the
// FeatureCollection.

#[derive(Serialize, Deserialize)]
struct FeatureCollection {
    #[serde(rename = "type")]
    kind: String,
    round_id: u64,
    capture_started_at: DateTime<Utc>,
    generated_at: DateTime<Utc>,
    features: Vec<Feature>,
}

#[derive(Serialize, Deserialize)]
struct Feature {
    #[serde(rename = "type")]
    kind: String,
    id: String,
    geometry: Point,
    properties: Properties,
}

#[derive(Serialize, Deserialize)]
struct Point {
    #[serde(rename = "type")]
    kind: String,
    coordinates: [f64; 2],
}

#[derive(Serialize, Deserialize)]
struct Properties {
    tvid: String,
    status: StatusColor,
    color: String,
    roadsection: String,
    observed_at: DateTime<Utc>,
    probabilities: Option<ClassProbabilities>,
    water_level: Option<GradeOutcome>,
    frame_ref: Option<String>,
    failure: Option<FailureKind>,
}

/// RFC 7946 FeatureCollection with one Point per camera, `[lon, lat]`.
pub fn to_geojson(state: &MapState) -> Value {
    let fc = FeatureCollection {
        kind: "FeatureCollection".into(),
        round_id: state.round_id,
        capture_started_at: state.capture_started_at,
        generated_at: state.generated_at,
        features: state
            .cameras
            .iter()
            .map(|c| Feature {
                kind: "Feature".into(),
                id: c.tvid.clone(),
                geometry: Point {
                    kind: "Point".into(),
                    coordinates: [c.longitude, c.latitude],
                },
                properties: Properties {
                    tvid: c.tvid.clone(),
                    status: c.status,
                    color: c.status.color().into(),
                    roadsection: c.roadsection.clone(),
                    observed_at: c.observed_at,
                    probabilities: c.probabilities,
                    water_level: c.water_level,
                    frame_ref: c.frame_ref.clone(),
                    failure: c.failure,
                },
            })
            .collect(),
    };
    serde_json::to_value(fc).expect("map state serializes")
}

pub fn to_geojson_string(state: &MapState) -> String {
    serde_json::to_string(&to_geojson(state)).expect("map state serializes")
}

/// Reads back a document written by [`to_geojson`].
pub fn from_geojson(text: &str) -> Result<MapState, MapError> {
    let fc: FeatureCollection = serde_json::from_str(text).map_err(|e| MapError::Document(e.to_string()))?;
    if fc.kind != "FeatureCollection" {
        return Err(MapError::Document(format!("type `{}`", fc.kind)));
    }
    let cameras = fc
        .features
        .into_iter()
        .map(|f| {
            if f.kind != "Feature" || f.geometry.kind != "Point" {
                return Err(MapError::Document(format!("feature `{}` is not a Point feature", f.id)));
            }
            let p = f.properties;
            Ok(CameraStatus {
                tvid: p.tvid,
                longitude: f.geometry.coordinates[0],
                latitude: f.geometry.coordinates[1],
                roadsection: p.roadsection,
                status: p.status,
                probabilities: p.probabilities,
                water_level: p.water_level,
                observed_at: p.observed_at,
                frame_ref: p.frame_ref,
                failure: p.failure,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(MapState {
        round_id: fc.round_id,
        capture_started_at: fc.capture_started_at,
        generated_at: fc.generated_at,
        cameras,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloodEvent {
    pub event_number: usize,
    pub tvid: String,
    pub latitude: f64,
    pub longitude: f64,
    pub roadsection: String,
    pub frame_ref: Option<String>,
    pub probabilities: Option<ClassProbabilities>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub water_level: Option<GradeOutcome>,
}

/// Flood-only event list, numbered north to south.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub round_id: u64,
    pub generated_at: DateTime<Utc>,
    pub map_url: String,
    pub events: Vec<FloodEvent>,
}

impl SummaryReport {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// The machine-readable report document; also the webhook payload.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Descending latitude, then ascending longitude, then tvid.
fn north_to_south(a: &CameraStatus, b: &CameraStatus) -> Ordering {
    b.latitude
        .total_cmp(&a.latitude)
        .then(a.longitude.total_cmp(&b.longitude))
        .then_with(|| a.tvid.cmp(&b.tvid))
}

pub fn summary_report(state: &MapState, map_url: &str) -> SummaryReport {
    let mut floods: Vec<&CameraStatus> = state
        .cameras
        .iter()
        .filter(|c| c.status == StatusColor::Flood)
        .collect();
    floods.sort_by(|a, b| north_to_south(a, b));
    SummaryReport {
        round_id: state.round_id,
        generated_at: state.generated_at,
        map_url: map_url.to_string(),
        events: floods
            .into_iter()
            .enumerate()
            .map(|(i, c)| FloodEvent {
                event_number: i + 1,
                tvid: c.tvid.clone(),
                latitude: c.latitude,
                longitude: c.longitude,
                roadsection: c.roadsection.clone(),
                frame_ref: c.frame_ref.clone(),
                probabilities: c.probabilities,
                water_level: c.water_level,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshMode {
    /// Official rainstorm warning in force.
    StormAdvisory,
    #[default]
    Normal,
}

impl std::str::FromStr for RefreshMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "storm_advisory" | "storm" => Ok(RefreshMode::StormAdvisory),
            "normal" => Ok(RefreshMode::Normal),
            other => Err(format!("unknown mode `{other}` (expected storm_advisory or normal)")),
        }
    }
}

pub const STORM_ADVISORY_INTERVAL: Duration = Duration::from_secs(300);
pub const NORMAL_INTERVAL: Duration = Duration::from_secs(3600);

/// Round interval for a mode; `override_interval` wins when set.
pub fn refresh_interval(mode: RefreshMode, override_interval: Option<Duration>) -> Duration {
    override_interval.unwrap_or(match mode {
        RefreshMode::StormAdvisory => STORM_ADVISORY_INTERVAL,
        RefreshMode::Normal => NORMAL_INTERVAL,
    })
}

/// Rolling on-disk history of map snapshots, `{round_id}.geojson`.
#[derive(Debug, Clone)]
pub struct SnapshotStore {
    dir: PathBuf,
    retention: usize,
}

/// One day of five-minute rounds.
pub const DEFAULT_RETENTION: usize = 288;

impl SnapshotStore {
    pub fn open(dir: impl Into<PathBuf>, retention: usize) -> Result<Self, MapError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            retention: retention.max(1),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_of(&self, round_id: u64) -> PathBuf {
        self.dir.join(format!("{round_id}.geojson"))
    }

    fn round_ids(&self) -> Result<Vec<u64>, MapError> {
        let mut ids: Vec<u64> = std::fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".geojson")?.parse().ok()
            })
            .collect();
        ids.sort_unstable();
        Ok(ids)
    }

    /// Writes the snapshot atomically, then prunes beyond the retention count.
    pub fn save(&self, state: &MapState) -> Result<PathBuf, MapError> {
        let path = self.path_of(state.round_id);
        let tmp = self.dir.join(format!(".{}.geojson.tmp", state.round_id));
        std::fs::write(&tmp, to_geojson_string(state))?;
        std::fs::rename(&tmp, &path)?;
        let ids = self.round_ids()?;
        if ids.len() > self.retention {
            for id in &ids[..ids.len() - self.retention] {
                let _ = std::fs::remove_file(self.path_of(*id));
            }
        }
        Ok(path)
    }

    pub fn load(&self, round_id: u64) -> Result<MapState, MapError> {
        from_geojson(&std::fs::read_to_string(self.path_of(round_id))?)
    }

    /// The most recent complete snapshot, if any.
    pub fn latest(&self) -> Result<Option<MapState>, MapError> {
        match self.round_ids()?.last() {
            Some(id) => self.load(*id).map(Some),
            None => Ok(None),
        }
    }

    pub fn count(&self) -> Result<usize, MapError> {
        Ok(self.round_ids()?.len())
    }
}
