//! WebSocket front end. One shared session; its event loop is the mutex
//! around it, so messages and ticks are totally ordered. The first client
//! to connect is the operator until it leaves or demotes itself; everyone
//! else is a viewer.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, Mutex};

use crate::protocol::{codes, parse_inbound, Inbound, Outbound, Role, SCHEMA};
use crate::session::Session;

const BROADCAST_DEPTH: usize = 64;

struct Shared {
    session: Arc<Mutex<Session>>,
    /// Connection id of the operator, 0 when the seat is free.
    operator: AtomicU64,
    next_id: AtomicU64,
    tx: broadcast::Sender<Arc<str>>,
    started: Instant,
}

#[derive(Clone)]
pub struct Server {
    shared: Arc<Shared>,
}

impl Server {
    pub fn new(session: Session) -> Self {
        let (tx, _) = broadcast::channel(BROADCAST_DEPTH);
        Self {
            shared: Arc::new(Shared {
                session: Arc::new(Mutex::new(session)),
                operator: AtomicU64::new(0),
                next_id: AtomicU64::new(1),
                tx,
                started: Instant::now(),
            }),
        }
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/session", get(upgrade))
            .route("/protocol.schema.json", get(schema))
            .with_state(self.clone())
    }

    /// Drives the session clock at 1 kHz; the session decides when a frame
    /// is due.
    pub fn spawn_ticker(&self) -> tokio::task::JoinHandle<()> {
        let shared = self.shared.clone();
        tokio::spawn(async move {
            let mut iv = tokio::time::interval(Duration::from_millis(1));
            iv.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
            loop {
                iv.tick().await;
                let t = shared.started.elapsed().as_secs_f64() * 1000.0;
                // rendering is CPU-bound; keep it off the async workers
                let mut guard = shared.session.clone().lock_owned().await;
                let Ok(out) = tokio::task::spawn_blocking(move || guard.tick(t)).await else {
                    break;
                };
                for m in out {
                    let _ = shared.tx.send(m.to_json().into());
                }
            }
        })
    }

    /// Finishes any open recording so it is left as a valid episode.
    pub async fn shutdown(&self) {
        if let Ok(Some((name, m))) = self.shared.session.lock().await.stop_recording() {
            log::info!("recording {name} closed with {} records", m.record_count);
        }
    }

    pub async fn serve(self, listener: TcpListener, shutdown: impl std::future::Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
        let ticker = self.spawn_ticker();
        let app = self.router();
        let result = axum::serve(listener, app.into_make_service_with_connect_info::<SocketAddr>())
            .with_graceful_shutdown(shutdown)
            .await;
        ticker.abort();
        self.shutdown().await;
        result
    }
}

async fn schema() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/schema+json")], SCHEMA)
}

async fn upgrade(ws: WebSocketUpgrade, State(server): State<Server>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, server.shared))
}

async fn connection(socket: WebSocket, shared: Arc<Shared>) {
    let id = shared.next_id.fetch_add(1, Ordering::SeqCst);
    let mut role = if shared.operator.compare_exchange(0, id, Ordering::SeqCst, Ordering::SeqCst).is_ok() {
        Role::Operator
    } else {
        Role::Viewer
    };
    log::info!("connection {id} joined as {role:?}");

    let (mut sink, mut stream) = socket.split();
    let (direct_tx, mut direct_rx) = mpsc::unbounded_channel::<Arc<str>>();
    let mut bcast = shared.tx.subscribe();
    let writer = tokio::spawn(async move {
        loop {
            let text = tokio::select! {
                m = direct_rx.recv() => match m {
                    Some(t) => t,
                    None => break,
                },
                m = bcast.recv() => match m {
                    Ok(t) => t,
                    // slow client: skip what it missed
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                },
            };
            if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                break;
            }
        }
    });

    while let Some(Ok(msg)) = stream.next().await {
        let bytes: Vec<u8> = match msg {
            Message::Text(t) => t.as_bytes().to_vec(),
            Message::Binary(b) => b.to_vec(),
            Message::Close(_) => break,
            _ => continue,
        };
        let mut replies = Vec::new();
        let hello = std::str::from_utf8(&bytes)
            .ok()
            .and_then(|t| parse_inbound(t).ok())
            .and_then(|m| match m {
                Inbound::Hello { role, .. } => Some(role),
                _ => None,
            });
        // role negotiation needs the seat, which the session does not own
        match hello {
            Some(Role::Viewer) => {
                let _ = shared.operator.compare_exchange(id, 0, Ordering::SeqCst, Ordering::SeqCst);
                role = Role::Viewer;
            }
            Some(Role::Operator) if role == Role::Viewer => {
                if shared.operator.compare_exchange(0, id, Ordering::SeqCst, Ordering::SeqCst).is_ok() {
                    role = Role::Operator;
                } else {
                    replies.push(Outbound::error(codes::OPERATOR_TAKEN, "another client is operating"));
                }
            }
            _ => {}
        }
        let out = shared.session.lock().await.handle_bytes(role, &bytes);
        replies.extend(out);
        for m in replies {
            let text: Arc<str> = m.to_json().into();
            // a hello answer only concerns the new client
            let unicast = hello.is_some() || matches!(m, Outbound::Error { .. } | Outbound::Record { .. });
            if unicast {
                let _ = direct_tx.send(text);
            } else {
                let _ = shared.tx.send(text);
            }
        }
    }

    let _ = shared.operator.compare_exchange(id, 0, Ordering::SeqCst, Ordering::SeqCst);
    drop(direct_tx);
    writer.abort();
    log::info!("connection {id} left");
}
