//! Simulation server. One thread owns the simulated arm; clients connect over
//! WebSocket (`/ws`) or length-prefixed TCP, receive a `hello` and then state
//! snapshots at the broadcast rate, and send commands that are applied on
//! the simulation thread in arrival order.

pub mod client;
mod sim;

use std::io;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc as std_mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;

use futures_util::{Sink, SinkExt, Stream, StreamExt};
use motion_studio_core::moa_metrics::MetricConfig;
use motion_studio_core::protocol::{
    ClientMessage, Envelope, ServerMessage, StateSnapshot, MAX_FRAME, PROTOCOL_VERSION,
};
use motion_studio_core::sim_exec::ControllerGains;
use motion_studio_core::{BindingMap, RobotModel, TeleopConfig};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tokio_tungstenite::tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tokio_tungstenite::tungstenite::http::StatusCode;
use tokio_tungstenite::tungstenite::Message;

use crate::sim::{Outgoing, Sim, SimCommand};

pub const DEFAULT_PORT: u16 = 8765;
pub const DEFAULT_BROADCAST_RATE: f64 = 50.0;
pub const WS_PATH: &str = "/ws";

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub host: IpAddr,
    /// WebSocket port; 0 picks a free one.
    pub port: u16,
    /// Optional plain-TCP port; 0 picks a free one.
    pub tcp_port: Option<u16>,
    /// Hz
    pub broadcast_rate: f64,
    /// Run trajectories unpaced instead of in real time.
    pub fast: bool,
    pub model: RobotModel,
    pub gains: ControllerGains,
    pub bindings: BindingMap,
    pub teleop: TeleopConfig,
    pub metrics: MetricConfig,
    /// Recorded logs kept for `log_fetch`/`analyze`; oldest dropped first.
    pub max_logs: usize,
}

impl ServerConfig {
    pub fn new(model: RobotModel) -> Self {
        ServerConfig {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: DEFAULT_PORT,
            tcp_port: None,
            broadcast_rate: DEFAULT_BROADCAST_RATE,
            fast: false,
            gains: ControllerGains::for_model(&model),
            model,
            bindings: BindingMap::default_gamepad(),
            teleop: TeleopConfig::default(),
            metrics: MetricConfig::default(),
            max_logs: 64,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn hello(cfg: &ServerConfig, client_id: u64, dt: f64) -> ServerMessage {
    ServerMessage::Hello {
        protocol_version: PROTOCOL_VERSION,
        client_id,
        model: cfg.model.clone(),
        broadcast_rate: cfg.broadcast_rate,
        dt,
        fast: cfg.fast,
    }
}

struct Shared {
    cfg: ServerConfig,
    dt: f64,
    cmd: std_mpsc::Sender<SimCommand>,
    snapshots: watch::Receiver<Option<Arc<StateSnapshot>>>,
    next_client: AtomicU64,
}

/// A running server. Dropping it shuts the server down.
pub struct ServerHandle {
    ws_addr: SocketAddr,
    tcp_addr: Option<SocketAddr>,
    cmd: std_mpsc::Sender<SimCommand>,
    stop: watch::Sender<bool>,
    sim: Option<JoinHandle<()>>,
    net: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn ws_addr(&self) -> SocketAddr {
        self.ws_addr
    }

    pub fn ws_url(&self) -> String {
        format!("ws://{}{}", self.ws_addr, WS_PATH)
    }

    pub fn tcp_addr(&self) -> Option<SocketAddr> {
        self.tcp_addr
    }

    /// Blocks until the simulation thread exits.
    pub fn wait(mut self) {
        if let Some(h) = self.sim.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(self) {
        drop(self)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.cmd.send(SimCommand::Shutdown);
        let _ = self.stop.send(true);
        if let Some(h) = self.sim.take() {
            let _ = h.join();
        }
        if let Some(h) = self.net.take() {
            let _ = h.join();
        }
    }
}

fn bind(addr: SocketAddr) -> Result<std::net::TcpListener, ServerError> {
    let l =
        std::net::TcpListener::bind(addr).map_err(|source| ServerError::Bind { addr, source })?;
    l.set_nonblocking(true)?;
    Ok(l)
}

/// Binds the listeners and starts the simulation and network threads.
pub fn start(cfg: ServerConfig) -> Result<ServerHandle, ServerError> {
    if !(cfg.broadcast_rate.is_finite() && cfg.broadcast_rate > 0.0 && cfg.broadcast_rate <= 1000.0)
    {
        return Err(ServerError::Config(format!(
            "broadcast rate {} Hz must be in (0, 1000]",
            cfg.broadcast_rate
        )));
    }
    cfg.metrics
        .validate()
        .map_err(|e| ServerError::Config(e.to_string()))?;
    let ws = bind(SocketAddr::new(cfg.host, cfg.port))?;
    let tcp = cfg
        .tcp_port
        .map(|p| bind(SocketAddr::new(cfg.host, p)))
        .transpose()?;
    let ws_addr = ws.local_addr()?;
    let tcp_addr = tcp.as_ref().map(|l| l.local_addr()).transpose()?;

    let (snap_tx, snap_rx) = watch::channel(None);
    let sim = Sim::new(cfg.clone(), snap_tx).map_err(|e| ServerError::Config(e.to_string()))?;
    let (cmd_tx, cmd_rx) = std_mpsc::channel();
    let sim_thread = std::thread::Builder::new()
        .name("simulation".into())
        .spawn(move || sim.run(cmd_rx))?;

    let shared = Arc::new(Shared {
        dt: motion_studio_core::sim_exec::DEFAULT_DT,
        cfg,
        cmd: cmd_tx.clone(),
        snapshots: snap_rx,
        next_client: AtomicU64::new(1),
    });
    let (stop_tx, stop_rx) = watch::channel(false);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let net_thread = std::thread::Builder::new()
        .name("network".into())
        .spawn(move || {
            runtime.block_on(async move {
                let ws = TcpListener::from_std(ws).expect("listener registers");
                let mut tasks = vec![tokio::spawn(accept_ws(ws, shared.clone(), stop_rx.clone()))];
                if let Some(tcp) = tcp {
                    let tcp = TcpListener::from_std(tcp).expect("listener registers");
                    tasks.push(tokio::spawn(accept_tcp(
                        tcp,
                        shared.clone(),
                        stop_rx.clone(),
                    )));
                }
                for t in tasks {
                    let _ = t.await;
                }
            });
            runtime.shutdown_background();
        })?;

    log::info!("listening on ws://{ws_addr}{WS_PATH}");
    if let Some(a) = tcp_addr {
        log::info!("listening on tcp://{a}");
    }
    Ok(ServerHandle {
        ws_addr,
        tcp_addr,
        cmd: cmd_tx,
        stop: stop_tx,
        sim: Some(sim_thread),
        net: Some(net_thread),
    })
}

async fn accept_ws(listener: TcpListener, shared: Arc<Shared>, mut stop: watch::Receiver<bool>) {
    loop {
        tokio::select! {
            _ = stop.changed() => return,
            accepted = listener.accept() => {
                let Ok((stream, peer)) = accepted else { continue };
                let _ = stream.set_nodelay(true);
                let shared = shared.clone();
                tokio::spawn(async move {
                    // the callback signature is fixed by tungstenite
                    #[allow(clippy::result_large_err)]
                    let check_path = |req: &Request, resp: Response| -> Result<Response, ErrorResponse> {
                        if req.uri().path() == WS_PATH {
                            Ok(resp)
                        } else {
                            let mut err = ErrorResponse::new(Some(format!("use {WS_PATH}")));
                            *err.status_mut() = StatusCode::NOT_FOUND;
                            Err(err)
                        }
                    };
                    match tokio_tungstenite::accept_hdr_async(stream, check_path).await {
                        Ok(ws) => {
                            let (sink, stream) = ws.split();
                            let sink = sink
                                .sink_map_err(io::Error::other)
                                .with(|s: String| async move { Ok::<_, io::Error>(Message::text(s)) });
                            let incoming = stream.filter_map(|m| async move {
                                match m {
                                    Ok(Message::Text(t)) => Some(Ok(t.as_str().to_owned())),
                                    Ok(Message::Binary(b)) => Some(Ok(String::from_utf8_lossy(&b).into_owned())),
                                    Ok(Message::Close(_)) => Some(Err(io::Error::from(io::ErrorKind::ConnectionAborted))),
                                    Ok(_) => None,
                                    Err(e) => Some(Err(io::Error::other(e))),
                                }
                            });
                            serve_connection(incoming, sink, shared).await;
                        }
                        Err(e) => log::debug!("websocket handshake with {peer} failed: {e}"),
                    }
                });
            }
        }
    }
}

async fn accept_tcp(listener: TcpListener, shared: Arc<Shared>, mut stop: watch::Receiver<bool>) {
    loop {
        tokio::select! {
            _ = stop.changed() => return,
            accepted = listener.accept() => {
                let Ok((stream, _)) = accepted else { continue };
                let _ = stream.set_nodelay(true);
                let shared = shared.clone();
                tokio::spawn(async move {
                    let (read, write) = stream.into_split();
                    let incoming = futures_util::stream::unfold(read, |mut r| async move {
                        let len = match r.read_u32().await {
                            Ok(n) => n as usize,
                            Err(_) => return None,
                        };
                        if len > MAX_FRAME {
                            let e = io::Error::new(io::ErrorKind::InvalidData, "frame too large");
                            return Some((Err(e), r));
                        }
                        let mut buf = vec![0u8; len];
                        if let Err(e) = r.read_exact(&mut buf).await {
                            return Some((Err(e), r));
                        }
                        Some((Ok(String::from_utf8_lossy(&buf).into_owned()), r))
                    });
                    let sink = futures_util::sink::unfold(write, |mut w, s: String| async move {
                        w.write_u32(s.len() as u32).await?;
                        w.write_all(s.as_bytes()).await?;
                        Ok::<_, io::Error>(w)
                    });
                    serve_connection(incoming, sink, shared).await;
                });
            }
        }
    }
}

/// Runs one client session over any framed transport.
async fn serve_connection<I, O>(incoming: I, outgoing: O, shared: Arc<Shared>)
where
    I: Stream<Item = io::Result<String>> + Send,
    O: Sink<String, Error = io::Error> + Send + 'static,
{
    let client = shared.next_client.fetch_add(1, Ordering::Relaxed);
    let (tx, mut rx) = mpsc::unbounded_channel::<Outgoing>();
    if shared
        .cmd
        .send(SimCommand::Connect {
            client,
            tx: tx.clone(),
        })
        .is_err()
    {
        return;
    }
    let mut snapshots = shared.snapshots.clone();
    let greeting = hello(&shared.cfg, client, shared.dt);
    let writer = tokio::spawn(async move {
        let mut outgoing = Box::pin(outgoing);
        let mut seq_no = 0u64;
        let mut frame = |re: Option<u64>, msg: ServerMessage| {
            seq_no += 1;
            Envelope {
                seq_no,
                re,
                message: msg,
            }
            .encode()
        };
        if outgoing.send(frame(None, greeting)).await.is_err() {
            return;
        }
        let first = snapshots.borrow_and_update().clone();
        if let Some(s) = first {
            if outgoing
                .send(frame(None, ServerMessage::Snapshot((*s).clone())))
                .await
                .is_err()
            {
                return;
            }
        }
        loop {
            let text = tokio::select! {
                biased;
                m = rx.recv() => match m {
                    Some((re, msg)) => frame(re, msg),
                    None => return,
                },
                changed = snapshots.changed() => {
                    if changed.is_err() {
                        return;
                    }
                    let s = snapshots.borrow_and_update().clone();
                    match s {
                        Some(s) => frame(None, ServerMessage::Snapshot((*s).clone())),
                        None => continue,
                    }
                }
            };
            if outgoing.send(text).await.is_err() {
                return;
            }
        }
    });

    let mut incoming = Box::pin(incoming);
    let mut last_seq: Option<u64> = None;
    while let Some(item) = incoming.next().await {
        let Ok(text) = item else { break };
        match Envelope::<ClientMessage>::decode(&text) {
            Err(e) => {
                let _ = tx.send((
                    e.seq_no,
                    ServerMessage::Error {
                        reason: e.reason,
                        seq_no: e.seq_no,
                    },
                ));
            }
            Ok(env) if last_seq.is_some_and(|l| env.seq_no <= l) => {
                let _ = tx.send((
                    Some(env.seq_no),
                    ServerMessage::Error {
                        reason: format!(
                            "seq_no {} does not increase (last {})",
                            env.seq_no,
                            last_seq.unwrap_or(0)
                        ),
                        seq_no: Some(env.seq_no),
                    },
                ));
            }
            Ok(env) => {
                last_seq = Some(env.seq_no);
                let cmd = SimCommand::Message {
                    client,
                    seq_no: env.seq_no,
                    message: env.message,
                };
                if shared.cmd.send(cmd).is_err() {
                    break;
                }
            }
        }
    }
    let _ = shared.cmd.send(SimCommand::Disconnect { client });
    drop(tx);
    // let queued replies drain; the sim drops its sender on disconnect
    let _ = tokio::time::timeout(std::time::Duration::from_millis(200), writer).await;
}
