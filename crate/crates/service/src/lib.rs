//! HTTP service and device listener around a [`vitalnav_core::Engine`].

pub mod api;
pub mod config;
pub mod listener;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use api::router;
pub use config::{ConfigError, ServiceConfig};
pub use state::{AppState, Clock};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: SocketAddr, message: String },
}

const SHUTDOWN_GRACE: Duration = Duration::from_secs(2);

pub struct RunningService {
    pub http_addr: SocketAddr,
    pub device_addr: SocketAddr,
    pub state: Arc<AppState>,
    shutdown: oneshot::Sender<()>,
    http: JoinHandle<std::io::Result<()>>,
    devices: JoinHandle<()>,
}

impl RunningService {
    /// Stops accepting requests and device connections and waits for the
    /// HTTP server to finish in-flight requests. Connections still open after
    /// a grace period, such as event streams, are cut.
    pub async fn shutdown(mut self) {
        let _ = self.shutdown.send(());
        self.devices.abort();
        if tokio::time::timeout(SHUTDOWN_GRACE, &mut self.http).await.is_err() {
            self.http.abort();
        }
    }

    /// Runs until the HTTP server stops on its own.
    pub async fn wait(self) -> std::io::Result<()> {
        let result = match self.http.await {
            Ok(result) => result,
            Err(e) => Err(std::io::Error::other(e)),
        };
        self.devices.abort();
        result
    }
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|e| ServeError::Bind { addr, message: e.to_string() })
}

/// Loads the engine described by `config`, binds both ports and starts
/// serving. Must be called inside a tokio runtime.
pub async fn serve(config: &ServiceConfig) -> Result<RunningService, ServeError> {
    let engine = config.build_engine()?;
    let state = Arc::new(AppState::new(engine, Clock::Monotonic(Instant::now())));
    serve_state(config, state).await
}

/// Like [`serve`] but with a prepared state, e.g. one on a manual clock.
pub async fn serve_state(config: &ServiceConfig, state: Arc<AppState>) -> Result<RunningService, ServeError> {
    let http_listener = bind(SocketAddr::new(config.bind, config.http_port)).await?;
    let device_listener = bind(SocketAddr::new(config.bind, config.device_port)).await?;
    let http_addr = http_listener.local_addr().map_err(|e| ServeError::Bind {
        addr: SocketAddr::new(config.bind, config.http_port),
        message: e.to_string(),
    })?;
    let device_addr = device_listener.local_addr().map_err(|e| ServeError::Bind {
        addr: SocketAddr::new(config.bind, config.device_port),
        message: e.to_string(),
    })?;

    let devices = tokio::spawn(listener::run_listener(
        device_listener,
        state.reading_sink(),
        state.devices().clone(),
    ));
    let (shutdown, signal) = oneshot::channel::<()>();
    let app = router(state.clone());
    let http = tokio::spawn(async move {
        axum::serve(http_listener, app)
            .with_graceful_shutdown(async {
                let _ = signal.await;
            })
            .await
    });
    tracing::info!(%http_addr, %device_addr, "service listening");
    Ok(RunningService { http_addr, device_addr, state, shutdown, http, devices })
}
