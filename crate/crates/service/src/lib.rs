//! Network face of the health server and the emergency centre: an HTTP/JSON
//! and WebSocket API, a bulk-frame ingest listener, an SMS intake listener
//! for ALARM lines and an SMS bus that carries THRESH/ADVICE lines to
//! gateways.

pub mod http;
pub mod state;
pub mod tcp;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use icare_core::server::{HealthServer, ServerConfig, ServerError};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;

pub use state::{sleep_until, AppState, Clock, LiveEvent, LiveMessage, ScenarioClock, SmsBus, SystemClock};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub http: SocketAddr,
    pub bulk: SocketAddr,
    pub sms_intake: SocketAddr,
    pub sms_bus: SocketAddr,
    pub server: ServerConfig,
    pub journal: Option<PathBuf>,
    pub audit_log: Option<PathBuf>,
}

impl ServiceConfig {
    /// Every listener on an ephemeral localhost port.
    pub fn ephemeral(server: ServerConfig) -> Self {
        let any: SocketAddr = "127.0.0.1:0".parse().expect("literal addr");
        ServiceConfig {
            http: any,
            bulk: any,
            sms_intake: any,
            sms_bus: any,
            server,
            journal: None,
            audit_log: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error("{what}: {source}")]
    Io {
        what: String,
        #[source]
        source: std::io::Error,
    },
}

fn io(what: impl Into<String>) -> impl FnOnce(std::io::Error) -> ServiceError {
    let what = what.into();
    move |source| ServiceError::Io { what, source }
}

/// Bound addresses of a started service.
#[derive(Debug, Clone, Copy)]
pub struct Addrs {
    pub http: SocketAddr,
    pub bulk: SocketAddr,
    pub sms_intake: SocketAddr,
    pub sms_bus: SocketAddr,
}

pub struct RunningService {
    pub addrs: Addrs,
    pub state: Arc<AppState>,
    cancel: CancellationToken,
    tasks: Vec<JoinHandle<()>>,
}

impl RunningService {
    pub fn http_url(&self) -> String {
        format!("http://{}", self.addrs.http)
    }

    /// Stops every listener and waits for them.
    pub async fn shutdown(self) {
        self.cancel.cancel();
        for t in self.tasks {
            let _ = t.await;
        }
    }

    /// Runs until ctrl-c.
    pub async fn wait_for_ctrl_c(self) {
        let _ = tokio::signal::ctrl_c().await;
        tracing::info!("shutting down");
        self.shutdown().await;
    }
}

async fn bind(addr: SocketAddr, what: &str) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr).await.map_err(io(format!("bind {what} on {addr}")))
}

/// Opens the stores and binds every listener.
pub async fn start(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<RunningService, ServiceError> {
    let server = match &config.journal {
        Some(path) => HealthServer::open(&config.server, path)?,
        None => HealthServer::new(&config.server)?,
    };
    let state = Arc::new(
        AppState::new(server, clock, config.audit_log.as_deref()).map_err(io("open audit log"))?,
    );

    let http = bind(config.http, "http").await?;
    let bulk = bind(config.bulk, "bulk ingest").await?;
    let intake = bind(config.sms_intake, "sms intake").await?;
    let bus = bind(config.sms_bus, "sms bus").await?;
    let addrs = Addrs {
        http: http.local_addr().map_err(io("http addr"))?,
        bulk: bulk.local_addr().map_err(io("bulk addr"))?,
        sms_intake: intake.local_addr().map_err(io("intake addr"))?,
        sms_bus: bus.local_addr().map_err(io("bus addr"))?,
    };

    let cancel = CancellationToken::new();
    let app = http::router(state.clone());
    let http_cancel = cancel.clone();
    let mut tasks = vec![tokio::spawn(async move {
        let served = axum::serve(http, app)
            .with_graceful_shutdown(async move { http_cancel.cancelled().await })
            .await;
        if let Err(e) = served {
            tracing::error!("http server: {e}");
        }
    })];
    tasks.push(tokio::spawn(tcp::serve(bulk, state.clone(), cancel.clone(), tcp::bulk_connection)));
    tasks.push(tokio::spawn(tcp::serve(intake, state.clone(), cancel.clone(), tcp::intake_connection)));
    tasks.push(tokio::spawn(tcp::serve(bus, state.clone(), cancel.clone(), tcp::bus_connection)));
    tracing::info!(
        http = %addrs.http, bulk = %addrs.bulk, intake = %addrs.sms_intake, bus = %addrs.sms_bus,
        "service listening"
    );
    Ok(RunningService {
        addrs,
        state,
        cancel,
        tasks,
    })
}
