//! Fleet scenarios and their registry documents.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::registry::{CameraRecord, CameraRegistry, Codec, RegistryError};
use crate::scene::SceneClass;

/// How a simulated camera misbehaves.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    #[default]
    None,
    /// The connection is dropped without a response.
    NoConnect,
    /// The first byte is delayed by this many seconds.
    Stall(f64),
    /// Pixel payload is scrambled; the frame still decodes.
    Noise,
    /// The connection closes halfway through the frame.
    TruncatedFrame,
}

impl Fault {
    pub fn stall(seconds: f64) -> Self {
        Fault::Stall(seconds)
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::None => f.write_str("none"),
            Fault::NoConnect => f.write_str("no_connect"),
            Fault::Stall(s) => write!(f, "stall:{s}"),
            Fault::Noise => f.write_str("noise"),
            Fault::TruncatedFrame => f.write_str("truncated_frame"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown fault `{0}` (expected none, no_connect, stall:<seconds>, noise, truncated_frame)")]
pub struct UnknownFault(pub String);

impl FromStr for Fault {
    type Err = UnknownFault;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if let Some(secs) = t.strip_prefix("stall:").or_else(|| t.strip_prefix("stall=")) {
            return secs
                .parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0 && v.is_finite())
                .map(Fault::Stall)
                .ok_or_else(|| UnknownFault(s.to_string()));
        }
        match t {
            "none" => Ok(Fault::None),
            "no_connect" => Ok(Fault::NoConnect),
            "noise" => Ok(Fault::Noise),
            "truncated_frame" => Ok(Fault::TruncatedFrame),
            _ => Err(UnknownFault(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCamera {
    pub tvid: String,
    #[serde(default = "default_scene")]
    pub scene: SceneClass,
    #[serde(default)]
    pub fault: Fault,
    #[serde(default = "default_network")]
    pub network: String,
    #[serde(default)]
    pub longitude: f64,
    #[serde(default)]
    pub latitude: f64,
    #[serde(default)]
    pub roadsection: String,
    /// Serving style; `JPEG` serves single images, others a multipart stream.
    #[serde(default)]
    pub codec: Option<Codec>,
    /// Overrides the scenario frame size.
    #[serde(default)]
    pub resolution: Option<(u32, u32)>,
}

fn default_scene() -> SceneClass {
    SceneClass::Normal
}

fn default_network() -> String {
    "SIM".into()
}

impl SimCamera {
    pub fn new(tvid: impl Into<String>, scene: SceneClass) -> Self {
        Self {
            tvid: tvid.into(),
            scene,
            fault: Fault::None,
            network: default_network(),
            longitude: 0.0,
            latitude: 0.0,
            roadsection: String::new(),
            codec: None,
            resolution: None,
        }
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = fault;
        self
    }

    pub fn at(mut self, longitude: f64, latitude: f64) -> Self {
        self.longitude = longitude;
        self.latitude = latitude;
        self
    }

    pub fn serving(&self) -> Codec {
        self.codec.unwrap_or(Codec::Jpeg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub cameras: Vec<SimCamera>,
    #[serde(default = "default_frame_size")]
    pub frame_size: (u32, u32),
    /// Gap between parts of a multipart stream.
    #[serde(default = "default_interval")]
    pub frame_interval_ms: u64,
    /// Extra delay before every response, standing in for network latency.
    #[serde(default)]
    pub latency_ms: u64,
}

fn default_frame_size() -> (u32, u32) {
    (352, 240)
}

fn default_interval() -> u64 {
    1000
}

impl SimScenario {
    pub fn new(cameras: Vec<SimCamera>) -> Self {
        Self {
            cameras,
            frame_size: default_frame_size(),
            frame_interval_ms: default_interval(),
            latency_ms: 0,
        }
    }

    /// `n` healthy cameras named `cam-0000`.. in one network, all of `scene`.
    pub fn uniform(n: usize, scene: SceneClass) -> Self {
        let cams = (0..n)
            .map(|i| {
                SimCamera::new(format!("cam-{i:04}"), scene)
                    .at(120.0 + (i % 100) as f64 * 0.01, 22.0 + (i / 100) as f64 * 0.01)
            })
            .collect();
        Self::new(cams)
    }

    pub fn frame_interval(&self) -> Duration {
        Duration::from_millis(self.frame_interval_ms)
    }

    pub fn resolution_of(&self, cam: &SimCamera) -> (u32, u32) {
        cam.resolution.unwrap_or(self.frame_size)
    }

    /// Registry document entries for this fleet, given each camera's URL.
    pub fn registry(&self, urls: &[String]) -> Result<CameraRegistry, RegistryError> {
        assert_eq!(urls.len(), self.cameras.len(), "one url per camera");
        let records = self
            .cameras
            .iter()
            .zip(urls)
            .map(|(cam, url)| CameraRecord {
                tvid: cam.tvid.clone(),
                longitude: cam.longitude,
                latitude: cam.latitude,
                roadsection: cam.roadsection.clone(),
                url: url.clone(),
                network: cam.network.clone(),
                codec_hint: cam.codec,
                resolution_hint: cam.resolution,
                extra: Map::new(),
            })
            .collect();
        CameraRegistry::from_records(records)
    }
}

/// One source network of the reference island-wide fleet.
pub struct NetworkProfile {
    pub key: &'static str,
    pub codec: Codec,
    pub resolutions: &'static [(u32, u32)],
    pub count: usize,
    /// (min lon, max lon, min lat, max lat)
    pub extent: (f64, f64, f64, f64),
}

/// Composition of the reference 2,379-camera fleet by source network.
/// Extents are rough service areas used only for synthetic placement.
pub const REFERENCE_FLEET: &[NetworkProfile] = &[
    NetworkProfile {
        key: "DGH",
        codec: Codec::Mjpeg,
        resolutions: &[(320, 240), (352, 240), (480, 270), (720, 480)],
        count: 1424,
        extent: (120.2, 121.9, 22.0, 25.3),
    },
    NetworkProfile {
        key: "NTPC",
        codec: Codec::Mjpeg,
        resolutions: &[(800, 600), (320, 180), (320, 192)],
        count: 289,
        extent: (121.3, 122.0, 24.7, 25.3),
    },
    NetworkProfile {
        key: "TYC",
        codec: Codec::Mjpeg,
        resolutions: &[(320, 240), (352, 240), (480, 270), (704, 480)],
        count: 123,
        extent: (121.0, 121.4, 24.6, 25.1),
    },
    NetworkProfile {
        key: "TYC",
        codec: Codec::Flv,
        resolutions: &[(800, 464), (1280, 720)],
        count: 29,
        extent: (121.0, 121.4, 24.6, 25.1),
    },
    NetworkProfile {
        key: "TNC",
        codec: Codec::Mjpeg,
        resolutions: &[(352, 240), (704, 480), (960, 480), (1920, 1080)],
        count: 148,
        extent: (120.0, 120.6, 22.9, 23.4),
    },
    NetworkProfile {
        key: "KC",
        codec: Codec::Jpeg,
        resolutions: &[(320, 240), (352, 240), (640, 480), (704, 480), (720, 480)],
        count: 341,
        extent: (120.2, 120.8, 22.5, 23.0),
    },
    NetworkProfile {
        key: "NC",
        codec: Codec::Jpeg,
        resolutions: &[(1280, 720), (1280, 1024), (352, 240), (720, 480)],
        count: 25,
        extent: (120.6, 121.3, 23.7, 24.2),
    },
];

pub fn reference_fleet_size() -> usize {
    REFERENCE_FLEET.iter().map(|p| p.count).sum()
}

/// The reference fleet with every camera healthy and normal, placed
/// deterministically from `seed`.
pub fn reference_scenario(seed: u64) -> SimScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cameras = Vec::with_capacity(reference_fleet_size());
    let mut per_key: std::collections::HashMap<&str, usize> = Default::default();
    for profile in REFERENCE_FLEET {
        let (lon0, lon1, lat0, lat1) = profile.extent;
        for i in 0..profile.count {
            let n = per_key.entry(profile.key).or_default();
            *n += 1;
            let mut cam = SimCamera::new(format!("{}-{:04}", profile.key, n), SceneClass::Normal);
            cam.network = profile.key.to_string();
            cam.longitude = round5(rng.gen_range(lon0..lon1));
            cam.latitude = round5(rng.gen_range(lat0..lat1));
            cam.roadsection = format!("{} synthetic section {}", profile.key, n);
            cam.codec = Some(profile.codec);
            cam.resolution = Some(profile.resolutions[i % profile.resolutions.len()]);
            cameras.push(cam);
        }
    }
    SimScenario::new(cameras)
}

fn round5(v: f64) -> f64 {
    (v * 1e5).round() / 1e5
}
