//! WebSocket front end for a [`Session`].
//!
//! One task owns the session and ticks it at the configured rate; every
//! connection forwards its text frames to that task and receives replies and
//! broadcasts through its own unbounded queue, so a slow client never causes
//! another to miss events.

use std::collections::BTreeMap;
use std::future::Future;
use std::net::SocketAddr;
use std::time::Duration;

use brickguide::protocol::{handle_message, highlights_message, ClientState, ErrorCode, ServerBody, ServerMessage};
use brickguide::session::{ClientId, Session, SessionConfig, SessionError};
use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::time::MissedTickBehavior;
use tokio_tungstenite::tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tokio_tungstenite::tungstenite::http::StatusCode;
use tokio_tungstenite::tungstenite::Message;

/// The only path that upgrades to a session socket.
pub const SESSION_PATH: &str = "/session";

/// A SNAPSHOT goes to every subscriber on ticks divisible by this.
pub const SNAPSHOT_INTERVAL_TICKS: u64 = 15;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Session(#[from] SessionError),
}

enum Ingress {
    Connect(ClientId, mpsc::UnboundedSender<String>),
    Text(ClientId, String),
    Disconnect(ClientId),
}

struct Client {
    state: ClientState,
    outbox: mpsc::UnboundedSender<String>,
}

pub struct Server {
    listener: TcpListener,
    session: Session,
}

impl Server {
    /// Builds the session and binds the listener. Plan and configuration
    /// errors surface here, before any port is opened.
    pub async fn bind(config: SessionConfig, addr: SocketAddr) -> Result<Self, ServerError> {
        let session = Session::new(config)?;
        let listener = TcpListener::bind(addr)
            .await
            .map_err(|source| ServerError::Bind { addr, source })?;
        Ok(Self { listener, session })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn session_id(&self) -> &str {
        self.session.session_id()
    }

    /// Serves until `shutdown` resolves.
    pub async fn run(self, shutdown: impl Future<Output = ()>) {
        let Server { listener, session } = self;
        let (ingress_tx, ingress_rx) = mpsc::unbounded_channel();
        let acceptor = tokio::spawn(accept_loop(listener, ingress_tx));
        session_loop(session, ingress_rx, shutdown).await;
        acceptor.abort();
    }
}

async fn accept_loop(listener: TcpListener, ingress: mpsc::UnboundedSender<Ingress>) {
    let mut next_id: ClientId = 0;
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                next_id += 1;
                tracing::debug!(%peer, client = next_id, "connection");
                tokio::spawn(connection(stream, next_id, ingress.clone()));
            }
            Err(e) => tracing::warn!("accept failed: {e}"),
        }
    }
}

#[allow(clippy::result_large_err)] // signature fixed by the handshake callback
fn check_path(req: &Request, resp: Response) -> Result<Response, ErrorResponse> {
    if req.uri().path() == SESSION_PATH {
        return Ok(resp);
    }
    let mut err = ErrorResponse::new(Some(format!("no session at {}", req.uri().path())));
    *err.status_mut() = StatusCode::NOT_FOUND;
    Err(err)
}

async fn connection(stream: TcpStream, id: ClientId, ingress: mpsc::UnboundedSender<Ingress>) {
    let ws = match tokio_tungstenite::accept_hdr_async(stream, check_path).await {
        Ok(ws) => ws,
        Err(e) => {
            tracing::debug!(client = id, "handshake failed: {e}");
            return;
        }
    };
    let (mut sink, mut stream) = ws.split();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<String>();
    if ingress.send(Ingress::Connect(id, out_tx)).is_err() {
        return;
    }
    let writer = tokio::spawn(async move {
        while let Some(text) = out_rx.recv().await {
            if sink.send(Message::text(text)).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    while let Some(msg) = stream.next().await {
        match msg {
            Ok(Message::Text(text)) => {
                if ingress.send(Ingress::Text(id, text.to_string())).is_err() {
                    break;
                }
            }
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => {}
        }
    }
    let _ = ingress.send(Ingress::Disconnect(id));
    writer.abort();
}

fn send(client: &Client, msg: &ServerMessage) {
    // A closed outbox means the connection is going away; its Disconnect
    // is already queued.
    let _ = client.outbox.send(msg.to_json());
}

fn broadcast(clients: &BTreeMap<ClientId, Client>, msg: &ServerMessage) {
    let text = msg.to_json();
    for c in clients.values().filter(|c| c.state.subscribed()) {
        let _ = c.outbox.send(text.clone());
    }
}

async fn session_loop(
    mut session: Session,
    mut ingress: mpsc::UnboundedReceiver<Ingress>,
    shutdown: impl Future<Output = ()>,
) {
    let sid = session.session_id().to_string();
    let period = Duration::from_secs_f64(1.0 / f64::from(session.config().tick_hz));
    let mut ticker = tokio::time::interval(period);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut clients: BTreeMap<ClientId, Client> = BTreeMap::new();
    tokio::pin!(shutdown);

    loop {
        tokio::select! {
            biased;
            _ = &mut shutdown => break,
            Some(msg) = ingress.recv() => match msg {
                Ingress::Connect(id, outbox) => {
                    clients.insert(id, Client { state: ClientState::default(), outbox });
                }
                Ingress::Disconnect(id) => {
                    clients.remove(&id);
                }
                Ingress::Text(id, text) => {
                    let Some(client) = clients.get_mut(&id) else { continue };
                    for reply in handle_message(&mut session, id, &mut client.state, &text) {
                        send(client, &reply);
                    }
                }
            },
            _ = ticker.tick() => {
                let report = session.tick();
                for a in &report.actions {
                    if let (Some(id), Some(err)) = (a.client, &a.error) {
                        if let Some(c) = clients.get(&id) {
                            send(c, &ServerMessage::error(&sid, ErrorCode::Action, err.clone()));
                        }
                    }
                }
                for e in &report.events {
                    broadcast(&clients, &ServerMessage::new(&sid, ServerBody::Event(e.clone())));
                }
                if let Some(h) = report.highlights {
                    broadcast(&clients, &highlights_message(&sid, report.tick, h));
                }
                if report.tick.is_multiple_of(SNAPSHOT_INTERVAL_TICKS) {
                    broadcast(&clients, &ServerMessage::new(&sid, ServerBody::Snapshot(session.snapshot())));
                }
            }
        }
    }
    tracing::info!(session = %sid, ticks = session.tick_index(), "session stopped");
}
