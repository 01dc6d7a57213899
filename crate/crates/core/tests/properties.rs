use std::collections::HashMap;
use std::time::Duration;

use chrono::{TimeZone, Utc};
use floodwatch::classifier::ClassProbabilities;
use floodwatch::frame::EncodedFrame;
use floodwatch::ingest::{CaptureOutcome, CaptureResult, FailureKind, RoundResult};
use floodwatch::mapper::{summary_report, update_map, CameraStatus, MapState, StatusColor};
use floodwatch::registry::{parse_registry, CameraRecord, CameraRegistry};
use floodwatch::water_level::{
    compensation_flag, flood_depth, flood_fraction, wheel_diameter, Grade, GradingConfig, TireSpec,
    WaterLevelEstimate, WheelObservation,
};
use floodwatch::{SceneClass, SceneLabel};
use proptest::prelude::*;

/// Independent re-derivation of the wheel diameter: rim inches to cm plus
/// two sidewalls, each aspect percent of the width.
fn diameter_oracle(width_mm: f64, aspect_pct: f64, rim_in: f64) -> f64 {
    rim_in * 2.54 + 2.0 * (width_mm / 10.0) * (aspect_pct / 100.0)
}

fn observation() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.0f64..5000.0, 1.0f64..5000.0, 0.0f64..=1.0).prop_map(|(top, height, w)| (top, top + height, top + w * height))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn fraction_in_unit_interval_and_grade_consistent((top, bottom, line) in observation()) {
        let obs = WheelObservation::rows("p", top, bottom).with_waterline(line);
        let f = flood_fraction(&obs).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        let est = WaterLevelEstimate::from_fraction(f, &GradingConfig::default());
        prop_assert_eq!(est.grade == Grade::FloodedAboveThird, f >= 1.0 / 3.0);
        prop_assert_eq!(est.compensation, est.depth_cm > 50.0);
        prop_assert_eq!(compensation_flag(est.depth_cm), est.depth_cm > 50.0);
    }

    #[test]
    fn waterline_outside_mask_clamps(top in 0.0f64..100.0, height in 1.0f64..100.0, over in 0.0f64..50.0) {
        let obs = WheelObservation::rows("p", top, top + height).with_mask(top, top + height + over);
        prop_assert_eq!(flood_fraction(&obs).unwrap(), 0.0);
    }

    #[test]
    fn scale_invariance((top, bottom, line) in observation(), k in prop::sample::select(vec![2.0, 3.0, 10.0])) {
        let base = flood_fraction(&WheelObservation::rows("p", top, bottom).with_waterline(line)).unwrap();
        let scaled = flood_fraction(&WheelObservation::rows("p", top * k, bottom * k).with_waterline(line * k)).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9, "{base} vs {scaled}");
        let mask = flood_fraction(&WheelObservation::rows("p", top, bottom).with_mask(top, line)).unwrap();
        let mask_k = flood_fraction(&WheelObservation::rows("p", top * k, bottom * k).with_mask(top * k, line * k)).unwrap();
        prop_assert!((mask - mask_k).abs() <= 1e-9);
    }

    #[test]
    fn waterline_and_mask_forms_agree(top in 0i64..2000, height in 1i64..2000, dry in 0.0f64..=1.0) {
        let (top, bottom) = (top as f64, (top + height) as f64);
        let line = (top + (dry * height as f64).round()).min(bottom);
        let by_line = flood_fraction(&WheelObservation::rows("p", top, bottom).with_waterline(line)).unwrap();
        let by_mask = flood_fraction(&WheelObservation::rows("p", top, bottom).with_mask(top, line)).unwrap();
        prop_assert!((by_line - by_mask).abs() <= 1.0 / height as f64);
    }

    #[test]
    fn fraction_nonincreasing_in_waterline((top, bottom, a) in observation(), t in 0.0f64..=1.0) {
        let b = a + t * (bottom - a);
        let fa = flood_fraction(&WheelObservation::rows("p", top, bottom).with_waterline(a)).unwrap();
        let fb = flood_fraction(&WheelObservation::rows("p", top, bottom).with_waterline(b)).unwrap();
        prop_assert!(fb <= fa);
    }

    #[test]
    fn depth_strictly_increasing_in_fraction(a in 0.0f64..1.0, d in 1e-6f64..1.0) {
        let b = (a + d).min(1.0);
        prop_assume!(b > a);
        let spec = TireSpec::SEDAN_DEFAULT;
        prop_assert!(flood_depth(b, &spec) > flood_depth(a, &spec));
    }

    #[test]
    fn diameter_matches_oracle_and_band(width in 165.0f64..=245.0, aspect in 40.0f64..=70.0, rim in 14.0f64..=18.0) {
        let spec = TireSpec::new(width, aspect, rim).unwrap();
        let d = wheel_diameter(&spec);
        prop_assert!((d - diameter_oracle(width, aspect, rim)).abs() < 1e-9);
        // Exact extremes of this box are 48.76 and 80.02 cm.
        prop_assert!((48.0..=80.02 + 1e-9).contains(&d), "{d}");
    }
}

#[test]
fn diameter_box_extremes() {
    let lo = wheel_diameter(&TireSpec::new(165.0, 40.0, 14.0).unwrap());
    let hi = wheel_diameter(&TireSpec::new(245.0, 70.0, 18.0).unwrap());
    assert!((lo - diameter_oracle(165.0, 40.0, 14.0)).abs() < 1e-9);
    assert!((lo - 48.76).abs() < 1e-9);
    // The top corner overshoots a round 80 cm by 0.02 cm.
    assert!((hi - 80.02).abs() < 1e-9);
    // The nominal 55..75 cm sedan band lies inside the reachable range.
    assert!(lo <= 55.0 && hi >= 75.0);
    assert!((wheel_diameter(&TireSpec::new(185.0, 55.0, 14.0).unwrap()) - 55.91).abs() < 0.005);
}

fn t0() -> chrono::DateTime<Utc> {
    Utc.timestamp_opt(1_650_000_000, 0).unwrap()
}

fn record(i: usize, lon: f64, lat: f64, network: &str) -> CameraRecord {
    CameraRecord {
        tvid: format!("cam-{i:05}"),
        longitude: lon,
        latitude: lat,
        roadsection: format!("section {i}"),
        url: format!("http://10.0.{}.{}/video", i / 250, i % 250),
        network: network.to_string(),
        codec_hint: None,
        resolution_hint: None,
        extra: Default::default(),
    }
}

fn coords() -> impl Strategy<Value = Vec<(f64, f64, u8)>> {
    prop::collection::vec((-180.0f64..=180.0, -90.0f64..=90.0, 0u8..3), 0..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn registry_document_roundtrip(points in coords()) {
        let records: Vec<_> = points
            .iter()
            .enumerate()
            .map(|(i, (lon, lat, n))| record(i, *lon, *lat, ["DGH", "KC", "NC"][*n as usize]))
            .collect();
        let reg = CameraRegistry::from_records(records.clone()).unwrap();
        let back = parse_registry(&reg.to_document()).unwrap();
        prop_assert_eq!(back.len(), records.len());
        for r in &records {
            prop_assert_eq!(back.lookup(&r.tvid), Some(r));
        }
        prop_assert_eq!(back.to_document(), reg.to_document());
    }

    #[test]
    fn report_is_permutation_invariant(points in prop::collection::vec((119.0f64..123.0, 21.0f64..26.0, any::<bool>()), 1..40),
                                       seed in any::<u64>()) {
        // Quantize so that ties on latitude and longitude actually occur.
        let cams: Vec<CameraStatus> = points
            .iter()
            .enumerate()
            .map(|(i, (lon, lat, flood))| CameraStatus {
                tvid: format!("c{i:03}"),
                longitude: (lon * 10.0).round() / 10.0,
                latitude: (lat * 10.0).round() / 10.0,
                roadsection: String::new(),
                status: if *flood { StatusColor::Flood } else { StatusColor::Normal },
                probabilities: Some(ClassProbabilities::peaked(if *flood { SceneClass::Flood } else { SceneClass::Normal }, 0.9)),
                water_level: None,
                observed_at: t0(),
                frame_ref: None,
                failure: None,
            })
            .collect();
        let mut shuffled = cams.clone();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let state = |cameras| MapState { round_id: 1, capture_started_at: t0(), generated_at: t0(), cameras };
        let a = summary_report(&state(cams), "http://m").to_json();
        let b = summary_report(&state(shuffled), "http://m").to_json();
        prop_assert_eq!(&a, &b);

        let report: floodwatch::SummaryReport = serde_json::from_str(&a).unwrap();
        for (i, e) in report.events.iter().enumerate() {
            prop_assert_eq!(e.event_number, i + 1);
        }
        for w in report.events.windows(2) {
            let (p, q) = (&w[0], &w[1]);
            prop_assert!(
                p.latitude > q.latitude
                    || (p.latitude == q.latitude && p.longitude < q.longitude)
                    || (p.latitude == q.latitude && p.longitude == q.longitude && p.tvid < q.tvid)
            );
        }
        prop_assert_eq!(report.events.len(), points.iter().filter(|p| p.2).count());
    }

    #[test]
    fn status_partition(outcomes in prop::collection::vec(0u8..7, 0..80)) {
        let records: Vec<_> = (0..outcomes.len()).map(|i| record(i, 121.0, 24.0, "N")).collect();
        let reg = CameraRegistry::from_records(records).unwrap();
        let frame = EncodedFrame { bytes: bytes::Bytes::from_static(b"f"), width: 1, height: 1 };
        let mut labels = HashMap::new();
        let results: Vec<CaptureResult> = outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let tvid = format!("cam-{i:05}");
                let outcome = match o {
                    0..=2 => {
                        let class = SceneClass::ALL[*o as usize];
                        labels.insert(tvid.clone(), SceneLabel::from_probabilities(ClassProbabilities::peaked(class, 0.9)));
                        CaptureOutcome::Frame(frame.clone())
                    }
                    k => CaptureOutcome::Failure { kind: FailureKind::ALL[(*k - 3) as usize], detail: String::new() },
                };
                CaptureResult { tvid, outcome, captured_at: t0(), elapsed: Duration::ZERO }
            })
            .collect();
        let round = RoundResult {
            round_id: 1,
            results,
            started_at: t0(),
            finished_at: t0(),
            wall: Duration::ZERO,
            network_wall: vec![],
        };
        let state = update_map(&reg, &round, &labels, &HashMap::new(), &HashMap::new(), t0()).unwrap();
        let c = state.counts();
        prop_assert_eq!(c.total(), outcomes.len());
        prop_assert_eq!(c.no_video, outcomes.iter().filter(|o| **o >= 3).count());
        for (s, o) in state.cameras.iter().zip(&outcomes) {
            prop_assert_eq!(s.status == StatusColor::NoVideo, *o >= 3);
            prop_assert_eq!(s.failure.is_some(), *o >= 3);
        }
    }
}
