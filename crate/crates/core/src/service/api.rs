//! Read-only HTTP API over the latest published round.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::watch;

use super::pipeline::SharedState;

pub fn router(shared: Arc<SharedState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/map.geojson", get(map))
        .route("/events", get(events))
        .route("/camera/{tvid}", get(camera))
        .route("/metrics", get(metrics))
        .with_state(shared)
}

fn no_snapshot() -> Response {
    (
        StatusCode::SERVICE_UNAVAILABLE,
        Json(json!({"error": "no round has completed yet"})),
    )
        .into_response()
}

async fn healthz(State(s): State<Arc<SharedState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "latest_round": s.latest().map(|p| p.state.round_id),
    }))
}

async fn map(State(s): State<Arc<SharedState>>) -> Response {
    match s.latest() {
        Some(p) => ([(header::CONTENT_TYPE, "application/geo+json")], p.geojson.clone()).into_response(),
        None => no_snapshot(),
    }
}

async fn events(State(s): State<Arc<SharedState>>) -> Response {
    match s.latest() {
        Some(p) => ([(header::CONTENT_TYPE, "application/json")], p.report.to_json()).into_response(),
        None => no_snapshot(),
    }
}

async fn camera(State(s): State<Arc<SharedState>>, Path(tvid): Path<String>) -> Response {
    let Some(p) = s.latest() else {
        return no_snapshot();
    };
    match p.state.camera(&tvid) {
        Some(c) => Json(c.clone()).into_response(),
        None => (
            StatusCode::NOT_FOUND,
            Json(json!({"error": format!("unknown camera `{tvid}`")})),
        )
            .into_response(),
    }
}

async fn metrics(State(s): State<Arc<SharedState>>) -> Response {
    Json(s.metrics()).into_response()
}

/// Serves until `shutdown` turns true.
pub async fn serve(
    listener: TcpListener,
    shared: Arc<SharedState>,
    mut shutdown: watch::Receiver<bool>,
) -> std::io::Result<()> {
    axum::serve(listener, router(shared))
        .with_graceful_shutdown(async move {
            while !*shutdown.borrow() {
                if shutdown.changed().await.is_err() {
                    break;
                }
            }
        })
        .await
}
