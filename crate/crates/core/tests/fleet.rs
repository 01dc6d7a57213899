mod common;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use floodwatch::classifier::{classify, classify_batch, StubClassifier};
use floodwatch::frame;
use floodwatch::ingest::{build_client, capture_one, CaptureConfig, Ingestor, DEADLINE_GRACE};
use floodwatch::registry::Codec;
use floodwatch::simulator::scenario::{Fault, SimCamera, SimScenario};
use floodwatch::{CaptureOutcome, FailureKind, SceneClass, SceneTag};
use tokio::io::{AsyncReadExt, AsyncWriteExt};

fn cam(id: &str, scene: SceneClass, codec: Codec) -> SimCamera {
    let mut c = SimCamera::new(id, scene).at(121.0, 24.0);
    c.codec = Some(codec);
    c
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn mixed_codecs_capture_and_classify() {
    let mut cams = Vec::new();
    for (i, scene) in SceneClass::ALL.iter().cycle().take(12).enumerate() {
        let codec = [Codec::Jpeg, Codec::Mjpeg, Codec::Flv][i % 3];
        let mut c = cam(&format!("c{i}"), *scene, codec);
        c.resolution = Some([(320, 240), (704, 480), (1280, 720)][i % 3]);
        cams.push(c);
    }
    let scenario = SimScenario::new(cams);
    let (registry, fleet) = common::fleet(&scenario).await;
    let ingestor = Ingestor::new(CaptureConfig::default().with_deadline(Duration::from_secs(5))).unwrap();
    let round = ingestor.run_round(&registry).await;

    assert_eq!(round.frames(), 12);
    let ids: Vec<_> = round.results.iter().map(|r| r.tvid.as_str()).collect();
    let expected: Vec<_> = scenario.cameras.iter().map(|c| c.tvid.as_str()).collect();
    assert_eq!(ids, expected, "results keep registry order");

    let frames: Vec<_> = round.results.iter().map(|r| r.frame().unwrap().bytes.clone()).collect();
    for (r, cam) in round.results.iter().zip(&scenario.cameras) {
        let f = r.frame().unwrap();
        assert_eq!((f.width, f.height), cam.resolution.unwrap());
        let tag = frame::comments(&f.bytes)
            .iter()
            .find_map(|c| SceneTag::decode(std::str::from_utf8(c).ok()?))
            .expect("tag survives canonical re-encode");
        assert_eq!(tag.tvid, cam.tvid);
        assert_eq!(tag.class, cam.scene);
    }
    let stub = StubClassifier::default();
    let labels = classify_batch(&stub, &frames);
    for (label, cam) in labels.iter().zip(&scenario.cameras) {
        assert_eq!(label.label, cam.scene, "{}", cam.tvid);
    }
    fleet.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn faults_map_to_failure_kinds() {
    let deadline = Duration::from_secs(1);
    let scenario = SimScenario::new(vec![
        cam("ok", SceneClass::Flood, Codec::Jpeg),
        cam("refuse", SceneClass::Normal, Codec::Jpeg).with_fault(Fault::NoConnect),
        cam("stall", SceneClass::Normal, Codec::Mjpeg).with_fault(Fault::Stall(5.0)),
        cam("cut-jpeg", SceneClass::Normal, Codec::Jpeg).with_fault(Fault::TruncatedFrame),
        cam("cut-mjpeg", SceneClass::Normal, Codec::Mjpeg).with_fault(Fault::TruncatedFrame),
        cam("noisy", SceneClass::Flood, Codec::Mjpeg).with_fault(Fault::Noise),
    ]);
    let (registry, fleet) = common::fleet(&scenario).await;
    let ingestor = Ingestor::new(CaptureConfig::default().with_deadline(deadline)).unwrap();
    let round = ingestor.run_round(&registry).await;

    let kind = |id: &str| round.get(id).unwrap().failure_kind();
    assert_eq!(kind("ok"), None);
    assert_eq!(kind("refuse"), Some(FailureKind::ConnectError));
    assert_eq!(kind("stall"), Some(FailureKind::Timeout));
    assert_eq!(kind("cut-jpeg"), Some(FailureKind::DecodeError));
    assert_eq!(kind("cut-mjpeg"), Some(FailureKind::DecodeError));
    assert_eq!(kind("noisy"), None);
    let stall = round.get("stall").unwrap();
    assert!(stall.elapsed <= deadline + DEADLINE_GRACE, "{:?}", stall.elapsed);

    let noisy = round.get("noisy").unwrap().frame().unwrap();
    assert_eq!(classify(&StubClassifier::default(), &noisy.bytes).label, SceneClass::Flood);

    let counts: HashMap<_, _> = round.failure_counts().into_iter().collect();
    assert_eq!(counts[&FailureKind::DecodeError], 2);
    assert_eq!(round.results.len(), 6);
    fleet.shutdown();
}

#[tokio::test]
async fn unreachable_host_is_connect_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let scenario = SimScenario::uniform(1, SceneClass::Normal);
    let mut registry_cams = scenario.registry(&[format!("http://{addr}/cam/x/frame")]).unwrap();
    let camera = registry_cams.records()[0].clone();
    let client = build_client(&CaptureConfig::default());
    let r = capture_one(&client, &camera, Duration::from_secs(2)).await;
    assert_eq!(r.failure_kind(), Some(FailureKind::ConnectError));
    registry_cams = scenario.registry(&["http://127.0.0.1:9/missing".into()]).unwrap();
    assert_eq!(registry_cams.len(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn http_error_status_is_connect_error() {
    let scenario = SimScenario::uniform(1, SceneClass::Normal);
    let (_, fleet) = common::fleet(&scenario).await;
    let reg = scenario.registry(&[format!("{}/cam/nobody/frame", fleet.base_url())]).unwrap();
    let client = build_client(&CaptureConfig::default());
    let r = capture_one(&client, &reg.records()[0], Duration::from_secs(2)).await;
    match &r.outcome {
        CaptureOutcome::Failure { kind, detail } => {
            assert_eq!(*kind, FailureKind::ConnectError);
            assert!(detail.contains("404"), "{detail}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stalled_camera_does_not_delay_the_rest() {
    let mut cams: Vec<SimCamera> = (0..20)
        .map(|i| cam(&format!("c{i:02}"), SceneClass::Normal, Codec::Mjpeg))
        .collect();
    cams[0].fault = Fault::Stall(30.0);
    cams[7].fault = Fault::Stall(30.0);
    let (registry, fleet) = common::fleet(&SimScenario::new(cams)).await;
    let deadline = Duration::from_secs(2);
    let ingestor = Ingestor::new(CaptureConfig::default().with_pool(4).with_deadline(deadline)).unwrap();
    let round = ingestor.run_round(&registry).await;
    assert_eq!(round.frames(), 18);
    for r in &round.results {
        if r.tvid == "c00" || r.tvid == "c07" {
            assert_eq!(r.failure_kind(), Some(FailureKind::Timeout));
            assert!(r.elapsed <= deadline + DEADLINE_GRACE);
        } else {
            assert!(r.elapsed < Duration::from_secs(1), "{} took {:?}", r.tvid, r.elapsed);
        }
    }
    // Two slots were tied up for one deadline each; the rest drained in parallel.
    assert!(round.wall < deadline + DEADLINE_GRACE, "{:?}", round.wall);
    fleet.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pool_bounds_concurrency() {
    let mut scenario = SimScenario::uniform(40, SceneClass::Normal);
    scenario.latency_ms = 150;
    let (registry, fleet) = common::fleet(&scenario).await;
    let ingestor = Ingestor::new(CaptureConfig::default().with_pool(8)).unwrap();
    let t = Instant::now();
    let round = ingestor.run_round(&registry).await;
    assert_eq!(round.frames(), 40);
    assert_eq!(ingestor.in_flight().peak(), 8);
    assert_eq!(ingestor.in_flight().current(), 0);
    // 40 cameras, 8 at a time, 150 ms each: at least five waves.
    assert!(t.elapsed() >= Duration::from_millis(5 * 150));
    fleet.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scene_changes_between_rounds() {
    let scenario = SimScenario::uniform(3, SceneClass::Normal);
    let (registry, fleet) = common::fleet(&scenario).await;
    let ingestor = Ingestor::new(CaptureConfig::default()).unwrap();
    let stub = StubClassifier::default();

    let r1 = ingestor.run_round(&registry).await;
    fleet.set_scene("cam-0001", SceneClass::Flood).unwrap();
    let r2 = ingestor.run_round(&registry).await;
    assert_eq!(r2.round_id, r1.round_id + 1);
    let label = |r: &floodwatch::RoundResult, id: &str| classify(&stub, &r.get(id).unwrap().frame().unwrap().bytes).label;
    assert_eq!(label(&r1, "cam-0001"), SceneClass::Normal);
    assert_eq!(label(&r2, "cam-0001"), SceneClass::Flood);
    assert_eq!(label(&r2, "cam-0000"), SceneClass::Normal);

    // Admin endpoint does the same over HTTP.
    let client = reqwest::Client::builder().no_proxy().build().unwrap();
    let resp = client
        .post(format!("{}/admin/fault", fleet.base_url()))
        .body(r#"{"tvid":"cam-0002","fault":"no_connect"}"#)
        .send()
        .await
        .unwrap();
    assert!(resp.status().is_success());
    assert_eq!(fleet.fault("cam-0002").unwrap(), Fault::NoConnect);
    let r3 = ingestor.run_round(&registry).await;
    assert_eq!(r3.get("cam-0002").unwrap().failure_kind(), Some(FailureKind::ConnectError));
    fleet.shutdown();
}

/// The simulator must sustain more open streams than the largest fleet.
#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn simulator_holds_2500_open_streams() {
    let mut scenario = SimScenario::uniform(50, SceneClass::Normal);
    for c in &mut scenario.cameras {
        c.codec = Some(Codec::Mjpeg);
        c.resolution = Some((160, 120));
    }
    let (_, fleet) = common::fleet(&scenario).await;
    let addr = fleet.addr();
    let mut conns = Vec::with_capacity(2500);
    for i in 0..2500 {
        let mut s = tokio::net::TcpStream::connect(addr).await.expect("connect");
        let req = format!("GET /cam/cam-{:04}/stream HTTP/1.1\r\nHost: sim\r\n\r\n", i % 50);
        s.write_all(req.as_bytes()).await.unwrap();
        conns.push(s);
    }
    let mut ok = 0;
    for s in &mut conns {
        let mut buf = [0u8; 12];
        s.read_exact(&mut buf).await.unwrap();
        if &buf == b"HTTP/1.1 200" {
            ok += 1;
        }
    }
    assert_eq!(ok, 2500);
    assert!(fleet.active_connections() >= 2500, "{}", fleet.active_connections());
    drop(conns);
    fleet.shutdown();
}
