#![allow(dead_code)]

use floodwatch::registry::CameraRegistry;
use floodwatch::simulator::scenario::SimScenario;
use floodwatch::simulator::{spawn_fleet, FleetHandle};

pub async fn fleet(scenario: &SimScenario) -> (CameraRegistry, FleetHandle) {
    let (_, handle) = spawn_fleet(scenario).await.expect("fleet starts");
    let registry = handle.registry(scenario).expect("fleet registry is valid");
    (registry, handle)
}

/// Writes `registry` as a document under `dir` and returns its path.
pub fn write_registry(dir: &std::path::Path, registry: &CameraRegistry) -> std::path::PathBuf {
    let path = dir.join("cameras.json");
    std::fs::write(&path, registry.to_document()).unwrap();
    path
}

#[derive(Debug, Clone)]
pub struct Received {
    pub round_header: Option<String>,
    pub body: String,
}

/// A webhook endpoint that records every POST and answers with `status`.
pub async fn webhook(status: u16) -> (String, std::sync::Arc<std::sync::Mutex<Vec<Received>>>) {
    use axum::http::{HeaderMap, StatusCode};
    use axum::routing::post;
    use std::sync::{Arc, Mutex};

    let log: Arc<Mutex<Vec<Received>>> = Arc::default();
    let sink = log.clone();
    let app = axum::Router::new().route(
        "/hook",
        post(move |headers: HeaderMap, body: String| {
            let sink = sink.clone();
            async move {
                sink.lock().unwrap().push(Received {
                    round_header: headers
                        .get("x-floodwatch-round")
                        .and_then(|v| v.to_str().ok())
                        .map(String::from),
                    body,
                });
                StatusCode::from_u16(status).unwrap()
            }
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/hook"), log)
}
