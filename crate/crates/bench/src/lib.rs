//! Fixtures shared by the benchmarks.

use std::collections::HashMap;
use std::time::Duration;

use chrono::{TimeZone, Utc};
use floodwatch::frame::EncodedFrame;
use floodwatch::mapper::{update_map, MapState};
use floodwatch::simulator::scenario::reference_scenario;
use floodwatch::{CaptureOutcome, CaptureResult, ClassProbabilities, FailureKind, RoundResult, SceneClass, SceneLabel};

/// A mapped reference-fleet round: one camera in 40 flooded, one in 25 dark.
pub fn reference_map() -> MapState {
    let scenario = reference_scenario(1);
    let urls: Vec<String> = (0..scenario.cameras.len()).map(|i| format!("http://10.0.0.1/cam/{i}")).collect();
    let registry = scenario.registry(&urls).expect("reference registry");
    let t = Utc.timestamp_opt(1_700_000_000, 0).unwrap();
    let mut labels = HashMap::new();
    let results = registry
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let outcome = if i % 25 == 0 {
                CaptureOutcome::Failure {
                    kind: FailureKind::Timeout,
                    detail: String::new(),
                }
            } else {
                let class = if i % 40 == 0 { SceneClass::Flood } else { SceneClass::Normal };
                labels.insert(r.tvid.clone(), SceneLabel::from_probabilities(ClassProbabilities::peaked(class, 0.9)));
                CaptureOutcome::Frame(EncodedFrame {
                    bytes: bytes::Bytes::new(),
                    width: 352,
                    height: 240,
                })
            };
            CaptureResult {
                tvid: r.tvid.clone(),
                outcome,
                captured_at: t,
                elapsed: Duration::ZERO,
            }
        })
        .collect();
    let round = RoundResult {
        round_id: 1,
        results,
        started_at: t,
        finished_at: t,
        wall: Duration::ZERO,
        network_wall: vec![],
    };
    update_map(&registry, &round, &labels, &HashMap::new(), &HashMap::new(), t).expect("map")
}
