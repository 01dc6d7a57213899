//! The long-running service: scheduler plus read API.

pub mod api;
pub mod config;
pub mod pipeline;

use std::net::SocketAddr;

use tokio::net::TcpListener;
use tokio::sync::watch;

pub use config::{ClassifierChoice, ConfigError, DetectorChoice, PipelineConfig};
pub use pipeline::{Pipeline, PipelineError, Published, RoundMetrics, RoundOutcome, SharedState};

/// Starts the API on the configured address and runs rounds until
/// `shutdown` turns true. Returns the bound address through `bound`.
pub async fn run_pipeline(
    config: PipelineConfig,
    shutdown: watch::Receiver<bool>,
    bound: Option<tokio::sync::oneshot::Sender<SocketAddr>>,
) -> Result<(), PipelineError> {
    let listen = config.listen_address;
    let pipeline = Pipeline::new(config)?;
    let listener = TcpListener::bind(listen).await.map_err(|source| PipelineError::Io {
        what: format!("binding {listen}"),
        source,
    })?;
    let addr = listener.local_addr().map_err(|source| PipelineError::Io {
        what: "listener address".into(),
        source,
    })?;
    tracing::info!("serving on http://{addr}");
    if let Some(tx) = bound {
        let _ = tx.send(addr);
    }
    let api = tokio::spawn(api::serve(listener, pipeline.shared(), shutdown.clone()));
    pipeline.run(shutdown).await;
    match api.await {
        Ok(Ok(())) => Ok(()),
        Ok(Err(source)) => Err(PipelineError::Io {
            what: "api server".into(),
            source,
        }),
        Err(e) => panic!("api task panicked: {e}"),
    }
}
