mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use floodwatch::classifier::StubClassifier;
use floodwatch::detection::DirectoryDetector;
use floodwatch::mapper::{from_geojson, StatusColor};
use floodwatch::notifier::{NotificationPolicy, NotifyMode};
use floodwatch::service::api::router;
use floodwatch::service::{run_pipeline, Pipeline, PipelineConfig};
use floodwatch::simulator::scenario::{Fault, SimScenario};
use floodwatch::water_level::Grade;
use floodwatch::{SceneClass, SummaryReport};
use http_body_util::BodyExt;
use tower::ServiceExt;

fn config(dir: &std::path::Path, registry: &floodwatch::CameraRegistry) -> PipelineConfig {
    let reg = common::write_registry(dir, registry);
    let mut cfg = PipelineConfig::new(reg, dir.join("data"));
    cfg.capture = cfg.capture.with_deadline(Duration::from_secs(2));
    cfg.validate().unwrap();
    cfg
}

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, String) {
    let resp = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(body.to_vec()).unwrap())
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn round_publishes_map_events_and_metrics() {
    let mut scenario = SimScenario::uniform(6, SceneClass::Normal);
    scenario.cameras[2].scene = SceneClass::Flood;
    scenario.cameras[4].scene = SceneClass::Unknown;
    scenario.cameras[5].fault = Fault::NoConnect;
    let (registry, fleet) = common::fleet(&scenario).await;
    let dir = tempfile::tempdir().unwrap();
    let pipeline = Pipeline::new(config(dir.path(), &registry)).unwrap();
    let app = router(pipeline.shared());

    assert_eq!(get(&app, "/map.geojson").await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(get(&app, "/events").await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(get(&app, "/healthz").await.0, StatusCode::OK);

    let out = pipeline.run_round_once().await.unwrap();
    let counts = out.published.state.counts();
    assert_eq!((counts.flood, counts.normal, counts.unknown, counts.no_video), (1, 3, 1, 1));
    assert_eq!(out.metrics.statuses, counts);
    assert!(out.metrics.total_wall_ms >= out.metrics.capture_wall_ms);

    let (status, body) = get(&app, "/map.geojson").await;
    assert_eq!(status, StatusCode::OK);
    let doc: serde_json::Value = serde_json::from_str(&body).unwrap();
    let reds: Vec<_> = doc["features"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|f| f["properties"]["color"] == "red")
        .collect();
    assert_eq!(reds.len(), 1);
    assert_eq!(reds[0]["id"], "cam-0002");

    let (_, events) = get(&app, "/events").await;
    let report: SummaryReport = serde_json::from_str(&events).unwrap();
    assert_eq!(report.events.len(), 1);
    assert_eq!(report.events[0].event_number, 1);
    let frame_ref = report.events[0].frame_ref.clone().unwrap();
    assert!(dir.path().join("data").join(&frame_ref).is_file(), "{frame_ref}");

    let (status, cam) = get(&app, "/camera/cam-0005").await;
    assert_eq!(status, StatusCode::OK);
    let cam: serde_json::Value = serde_json::from_str(&cam).unwrap();
    assert_eq!(cam["status"], "no_video");
    assert_eq!(cam["failure"], "connect_error");
    assert_eq!(get(&app, "/camera/missing").await.0, StatusCode::NOT_FOUND);

    pipeline.run_round_once().await.unwrap();
    pipeline.run_round_once().await.unwrap();
    let (_, metrics) = get(&app, "/metrics").await;
    let metrics: Vec<serde_json::Value> = serde_json::from_str(&metrics).unwrap();
    let ids: Vec<u64> = metrics.iter().map(|m| m["round_id"].as_u64().unwrap()).collect();
    assert_eq!(ids, [1, 2, 3]);
    assert!(dir.path().join("data/rounds/3.geojson").is_file());
    assert_eq!(std::fs::read_to_string(dir.path().join("data/metrics.log")).unwrap().lines().count(), 3);
    fleet.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn restart_serves_last_snapshot_and_continues_numbering() {
    let mut scenario = SimScenario::uniform(3, SceneClass::Normal);
    scenario.cameras[0].scene = SceneClass::Flood;
    let (registry, fleet) = common::fleet(&scenario).await;
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &registry);

    let first = Pipeline::new(cfg.clone()).unwrap();
    first.run_round_once().await.unwrap();
    first.run_round_once().await.unwrap();
    drop(first);

    let second = Pipeline::new(cfg).unwrap();
    let app = router(second.shared());
    let (status, body) = get(&app, "/map.geojson").await;
    assert_eq!(status, StatusCode::OK);
    let state = from_geojson(&body).unwrap();
    assert_eq!(state.round_id, 2);
    assert_eq!(state.camera("cam-0000").unwrap().status, StatusColor::Flood);
    let out = second.run_round_once().await.unwrap();
    assert_eq!(out.metrics.round_id, 3);
    fleet.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn dead_fleet_gives_all_white_map_and_loop_survives() {
    let scenario = SimScenario::uniform(4, SceneClass::Flood);
    let (registry, fleet) = common::fleet(&scenario).await;
    let dir = tempfile::tempdir().unwrap();
    let pipeline = Pipeline::new(config(dir.path(), &registry)).unwrap();
    assert_eq!(pipeline.run_round_once().await.unwrap().published.state.counts().flood, 4);
    fleet.shutdown();
    tokio::time::sleep(Duration::from_millis(50)).await;
    let out = pipeline.run_round_once().await.unwrap();
    assert_eq!(out.published.state.counts().no_video, 4);
    assert!(out
        .published
        .state
        .cameras
        .iter()
        .all(|c| c.status.color() == "white"));
    assert!(out.published.report.is_empty());
    // And the next round still runs.
    assert_eq!(pipeline.run_round_once().await.unwrap().metrics.round_id, 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn webhook_delivery_follows_policy() {
    let mut scenario = SimScenario::uniform(4, SceneClass::Normal);
    for (i, c) in scenario.cameras.iter_mut().enumerate() {
        c.latitude = 22.0 + i as f64;
    }
    let (registry, fleet) = common::fleet(&scenario).await;
    let (hook, received) = common::webhook(200).await;
    let (broken, broken_log) = common::webhook(500).await;
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), &registry);
    cfg.notification = NotificationPolicy::new(NotifyMode::OnChange, Duration::ZERO, &[&hook, &broken]).unwrap();
    cfg.map_url = Some("https://maps.example.org/flood".into());
    let pipeline = Pipeline::new(cfg).unwrap();

    // Nothing flooded: nothing sent.
    assert!(pipeline.run_round_once().await.unwrap().deliveries.is_empty());

    fleet.set_scene("cam-0000", SceneClass::Flood).unwrap();
    fleet.set_scene("cam-0003", SceneClass::Flood).unwrap();
    fleet.set_scene("cam-0002", SceneClass::Flood).unwrap();
    let out = pipeline.run_round_once().await.unwrap();
    assert_eq!(out.deliveries.len(), 2);
    let ok = out.deliveries.iter().find(|d| d.recipient == hook).unwrap();
    assert!(ok.delivered());
    let bad = out.deliveries.iter().find(|d| d.recipient == broken).unwrap();
    assert_eq!(
        bad.outcome,
        floodwatch::notifier::DeliveryOutcome::Failed("http 500".into())
    );
    assert_eq!(broken_log.lock().unwrap().len(), 1);

    let got = received.lock().unwrap().clone();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].round_header.as_deref(), Some("2"));
    let report: SummaryReport = serde_json::from_str(&got[0].body).unwrap();
    assert_eq!(report.map_url, "https://maps.example.org/flood");
    let order: Vec<_> = report.events.iter().map(|e| e.tvid.as_str()).collect();
    assert_eq!(order, ["cam-0003", "cam-0002", "cam-0000"]);
    assert_eq!(got[0].body, out.published.report.to_json());

    // Same flood set: no resend.
    assert!(pipeline.run_round_once().await.unwrap().deliveries.is_empty());
    assert_eq!(received.lock().unwrap().len(), 1);
    fleet.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn water_level_only_for_flood_cameras_with_detector() {
    let mut scenario = SimScenario::uniform(3, SceneClass::Flood);
    scenario.cameras[2].scene = SceneClass::Normal;
    let (registry, fleet) = common::fleet(&scenario).await;
    let dir = tempfile::tempdir().unwrap();
    let dets = dir.path().join("dets");
    std::fs::create_dir_all(&dets).unwrap();
    let record = |id: &str, waterline: f64| {
        format!(
            r#"{{"version":1,"tvid":"{id}","vehicles":[{{"box":[0,0,1000,1000],"wheels":[{{"box":[100,800,300,1000],"waterline_row":{waterline}}}]}}]}}"#
        )
    };
    std::fs::write(dets.join("cam-0000.json"), record("cam-0000", 900.0)).unwrap();
    std::fs::write(dets.join("cam-0002.json"), record("cam-0002", 810.0)).unwrap();
    let cfg = config(dir.path(), &registry);
    let pipeline = Pipeline::with_backends(
        cfg,
        Arc::new(StubClassifier::default()),
        Some(Arc::new(DirectoryDetector::new(&dets))),
    )
    .unwrap();
    let out = pipeline.run_round_once().await.unwrap();
    let state = &out.published.state;
    let level = state.camera("cam-0000").unwrap().water_level.unwrap();
    assert_eq!(level.grade, Grade::FloodedAboveThird);
    let est = level.estimate.unwrap();
    assert!((est.flood_fraction - 0.5).abs() < 1e-12);
    assert!((est.depth_cm - 0.5 * 66.44).abs() < 1e-6);
    // Flood camera without a record: no vehicle, no reading.
    assert!(state.camera("cam-0001").unwrap().water_level.is_none());
    // Normal camera is never graded even with a record on file.
    assert!(state.camera("cam-0002").unwrap().water_level.is_none());
    assert!(out.published.report.events[0].water_level.is_some());
    fleet.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scheduler_runs_and_shuts_down_cleanly() {
    let scenario = SimScenario::uniform(2, SceneClass::Normal);
    let (registry, fleet) = common::fleet(&scenario).await;
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), &registry);
    cfg.listen_address = "127.0.0.1:0".parse().unwrap();
    let (tx, rx) = tokio::sync::watch::channel(false);
    let (bound_tx, bound_rx) = tokio::sync::oneshot::channel();
    let task = tokio::spawn(run_pipeline(cfg, rx, Some(bound_tx)));
    let addr = bound_rx.await.unwrap();

    let client = reqwest::Client::builder().no_proxy().build().unwrap();
    let url = format!("http://{addr}/map.geojson");
    let mut served = false;
    for _ in 0..100 {
        if client.get(&url).send().await.unwrap().status() == 200 {
            served = true;
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    assert!(served, "first round published");
    tx.send(true).unwrap();
    tokio::time::timeout(Duration::from_secs(10), task)
        .await
        .expect("shutdown completes")
        .unwrap()
        .unwrap();
    // Hourly interval: only the immediate first tick ran.
    let metrics = floodwatch::service::pipeline::read_metrics(&dir.path().join("data/metrics.log"));
    assert_eq!(metrics.len(), 1);
    fleet.shutdown();
}
