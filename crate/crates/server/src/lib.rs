//! Live lesson service.
//!
//! One [`Hub`] owns every session; each session runs in its own task. Two
//! bindings carry the same envelopes: newline-delimited JSON over a plain
//! TCP socket, and text frames over a web socket at `/ws` on the HTTP
//! port, next to the JSON API and (optionally) the static UI.

pub mod api;
pub mod connection;
pub mod hub;
pub mod outbound;

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use rapport_core::config::Config;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;
use tracing::{debug, info};

pub use hub::Hub;

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub config: Config,
    pub host: IpAddr,
    /// Static files served at `/` (the browser client).
    pub ui_dir: Option<PathBuf>,
    /// Write one trace per session here, frames included.
    pub record_dir: Option<PathBuf>,
}

impl ServerOptions {
    pub fn new(config: Config) -> Self {
        ServerOptions { config, host: IpAddr::V4(Ipv4Addr::LOCALHOST), ui_dir: None, record_dir: None }
    }
}

/// Bound but not yet serving.
pub struct Server {
    hub: Arc<Hub>,
    http: TcpListener,
    socket: TcpListener,
    ui_dir: Option<PathBuf>,
}

impl Server {
    /// Bind the HTTP and socket ports from the config; port 0 picks a free one.
    pub async fn bind(opts: ServerOptions) -> std::io::Result<Server> {
        let http = TcpListener::bind(SocketAddr::new(opts.host, opts.config.port)).await?;
        let socket = TcpListener::bind(SocketAddr::new(opts.host, opts.config.socket_port)).await?;
        Ok(Server { hub: Hub::new(opts.config, opts.record_dir), http, socket, ui_dir: opts.ui_dir })
    }

    pub fn http_addr(&self) -> SocketAddr {
        self.http.local_addr().expect("bound listener")
    }

    pub fn socket_addr(&self) -> SocketAddr {
        self.socket.local_addr().expect("bound listener")
    }

    pub fn hub(&self) -> Arc<Hub> {
        self.hub.clone()
    }

    pub async fn run(self) -> std::io::Result<()> {
        info!(http = %self.http_addr(), socket = %self.socket_addr(), "serving");
        let mut app = api::router(self.hub.clone());
        if let Some(dir) = self.ui_dir {
            app = app.fallback_service(ServeDir::new(dir));
        }
        let sockets = tokio::spawn(accept_sockets(self.socket, self.hub));
        let served = axum::serve(self.http, app).await;
        sockets.abort();
        served
    }

    /// Run in the background; the handle's addresses are ready to use.
    pub fn spawn(self) -> RunningServer {
        let (http, socket) = (self.http_addr(), self.socket_addr());
        RunningServer { http, socket, task: tokio::spawn(self.run()) }
    }
}

pub struct RunningServer {
    pub http: SocketAddr,
    pub socket: SocketAddr,
    task: JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.http)
    }

    pub fn stop(self) {
        self.task.abort();
    }
}

async fn accept_sockets(listener: TcpListener, hub: Arc<Hub>) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                debug!(%peer, "socket client");
                tokio::spawn(serve_ndjson(stream, hub.clone()));
            }
            Err(e) => {
                debug!(error = %e, "accept failed");
                tokio::time::sleep(std::time::Duration::from_millis(100)).await;
            }
        }
    }
}

async fn serve_ndjson(stream: TcpStream, hub: Arc<Hub>) {
    let _ = stream.set_nodelay(true);
    let (read, write) = stream.into_split();
    let lines = BufReader::new(read).lines();
    let incoming = futures::stream::unfold(lines, |mut lines| async move {
        match lines.next_line().await {
            Ok(Some(line)) => Some((line, lines)),
            _ => None,
        }
    });
    let outgoing = futures::sink::unfold(write, |mut w, line: String| async move {
        w.write_all(line.as_bytes()).await?;
        w.write_all(b"\n").await?;
        Ok::<_, std::io::Error>(w)
    });
    connection::serve(hub, Box::pin(incoming), Box::pin(outgoing)).await;
}
