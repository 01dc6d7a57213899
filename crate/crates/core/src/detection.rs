//! Vehicle and wheel detections as data.
//!
//! Detection models run elsewhere; they hand over one record per frame in the
//! format below and this module turns it into grading input.
//!
//! ```json
//! {
//!   "version": 1,
//!   "tvid": "KC-0012",
//!   "vehicles": [
//!     {
//!       "box": [x0, y0, x1, y1],
//!       "wheels": [
//!         {"box": [x0, y0, x1, y1], "waterline_row": 812.0, "mask_rows": [640.0, 812.0]}
//!       ]
//!     }
//!   ]
//! }
//! ```
//!
//! * `version`: format version, currently `1`.
//! * `box`: pixel corners, left/top then right/bottom; rows grow downward.
//! * `waterline_row` (optional): image row of the water's upper bound inside the wheel box.
//! * `mask_rows` (optional): top and bottom rows of the visible, dry part of the segmented wheel.
//! * A vehicle with an empty `wheels` list is graded as an exception.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::frame;
use crate::ingest::frame_file_name;
use crate::plugin::SocketEndpoint;
use crate::water_level::{
    grade_frame, BoundingBox, GradeOutcome, GradingConfig, VehicleContext, WaterLevelError, WheelObservation,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DetectionError {
    #[error("malformed detection record: {0}")]
    Format(String),
    #[error("unsupported detection record version {0}")]
    Version(u32),
    #[error("record is for `{got}`, expected `{expected}`")]
    WrongCamera { expected: String, got: String },
    #[error(transparent)]
    Observation(#[from] WaterLevelError),
    #[error("detector backend: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WheelDetection {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waterline_row: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_rows: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleDetection {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default)]
    pub wheels: Vec<WheelDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub version: u32,
    pub tvid: String,
    #[serde(default)]
    pub vehicles: Vec<VehicleDetection>,
}

fn to_box(b: [f64; 4]) -> BoundingBox {
    BoundingBox::new(b[0], b[1], b[2], b[3])
}

impl DetectionRecord {
    pub fn parse(text: &str) -> Result<Self, DetectionError> {
        let rec: DetectionRecord = serde_json::from_str(text).map_err(|e| DetectionError::Format(e.to_string()))?;
        if rec.version != FORMAT_VERSION {
            return Err(DetectionError::Version(rec.version));
        }
        Ok(rec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    /// Validated grading input, one context per vehicle.
    pub fn vehicles(&self) -> Result<Vec<VehicleContext>, DetectionError> {
        self.vehicles
            .iter()
            .map(|v| {
                let wheels = v
                    .wheels
                    .iter()
                    .map(|w| WheelObservation {
                        tvid: self.tvid.clone(),
                        bbox: to_box(w.bbox),
                        waterline_row: w.waterline_row,
                        visible_mask_rows: w.mask_rows.map(|[t, b]| (t, b)),
                    })
                    .collect();
                Ok(VehicleContext::new(to_box(v.bbox), wheels)?)
            })
            .collect()
    }

    /// Grades the frame; `None` when no vehicle was detected.
    pub fn grade(&self, config: &GradingConfig) -> Result<Option<GradeOutcome>, DetectionError> {
        Ok(grade_frame(&self.vehicles()?, config))
    }
}

/// A vehicle/wheel detector. Must be deterministic for identical input.
pub trait DetectorBackend: Send + Sync {
    fn name(&self) -> &str;

    fn detect(&self, tvid: &str, frame: &[u8]) -> Result<DetectionRecord, DetectionError>;
}

/// Water-level reading for one flood frame.
pub fn estimate(
    backend: &dyn DetectorBackend,
    tvid: &str,
    frame: &[u8],
    config: &GradingConfig,
) -> Result<Option<GradeOutcome>, DetectionError> {
    let rec = backend.detect(tvid, frame)?;
    if rec.tvid != tvid {
        return Err(DetectionError::WrongCamera {
            expected: tvid.to_string(),
            got: rec.tvid,
        });
    }
    rec.grade(config)
}

/// Precomputed records read from `{dir}/{tvid}.json`. A missing file means no
/// vehicle was detected.
#[derive(Debug, Clone)]
pub struct DirectoryDetector {
    dir: PathBuf,
}

impl DirectoryDetector {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        Self {
            dir: dir.as_ref().to_path_buf(),
        }
    }
}

impl DetectorBackend for DirectoryDetector {
    fn name(&self) -> &str {
        "directory"
    }

    fn detect(&self, tvid: &str, _frame: &[u8]) -> Result<DetectionRecord, DetectionError> {
        let name = frame_file_name(tvid);
        let stem = name.strip_suffix(".jpg").unwrap_or(&name);
        let path = self.dir.join(format!("{stem}.json"));
        match std::fs::read_to_string(&path) {
            Ok(text) => DetectionRecord::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(DetectionRecord {
                version: FORMAT_VERSION,
                tvid: tvid.to_string(),
                vehicles: vec![],
            }),
            Err(e) => Err(DetectionError::Backend(format!("{}: {e}", path.display()))),
        }
    }
}

/// Detector served by another process. Request payload: the tvid, a newline,
/// then the frame bytes. Response payload: a detection record.
#[derive(Debug, Clone)]
pub struct ExternalDetector {
    endpoint: SocketEndpoint,
}

impl ExternalDetector {
    pub fn new(socket: impl AsRef<Path>) -> Self {
        Self {
            endpoint: SocketEndpoint::new(socket),
        }
    }
}

impl DetectorBackend for ExternalDetector {
    fn name(&self) -> &str {
        "external"
    }

    fn detect(&self, tvid: &str, frame_bytes: &[u8]) -> Result<DetectionRecord, DetectionError> {
        frame::probe(frame_bytes).map_err(|e| DetectionError::Backend(e.to_string()))?;
        let mut req = Vec::with_capacity(tvid.len() + 1 + frame_bytes.len());
        req.extend_from_slice(tvid.as_bytes());
        req.push(b'\n');
        req.extend_from_slice(frame_bytes);
        let reply = self
            .endpoint
            .call(&req)
            .map_err(|e| DetectionError::Backend(format!("{}: {e}", self.endpoint.path.display())))?;
        let text = String::from_utf8(reply).map_err(|_| DetectionError::Backend("response is not UTF-8".into()))?;
        DetectionRecord::parse(&text)
    }
}
