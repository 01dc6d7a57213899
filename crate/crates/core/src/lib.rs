//! Waterlogging sensing over a fleet of networked traffic cameras.
//!
//! One *round* captures a frame from every registered camera, classifies each
//! scene as normal, flood or unknown, optionally grades water depth against a
//! detected wheel, folds the outcome into a geo-referenced map and notifies
//! webhook recipients of flood events.
//!
//! A synthetic camera fleet ([`simulator`]) serves tagged frames with
//! injectable faults so the whole loop can run at fleet scale on one machine.

pub mod classifier;
pub mod detection;
pub mod frame;
pub mod ingest;
pub mod mapper;
pub mod notifier;
pub mod plugin;
pub mod registry;
pub mod scene;
pub mod service;
pub mod simulator;
pub mod water_level;

pub use classifier::{ClassProbabilities, ClassifierBackend, SceneLabel, StubClassifier};
pub use ingest::{CaptureConfig, CaptureOutcome, CaptureResult, FailureKind, RoundResult};
pub use mapper::{CameraStatus, FloodEvent, MapState, StatusColor, SummaryReport};
pub use notifier::{Delivery, NotificationPolicy, Notifier};
pub use registry::{CameraRecord, CameraRegistry, Codec};
pub use scene::{SceneClass, SceneTag};
pub use water_level::{Grade, TireSpec, WaterLevelEstimate, WheelObservation};
