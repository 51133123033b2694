//! Serves one live session over WebSocket.
//!
//! The tick loop owns the [`Session`]. Connection tasks only parse frames
//! and forward them to the loop through a queue, so every state change
//! happens at a tick boundary in arrival order. Outgoing messages are
//! serialized once and fanned out to every client.

use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use sb2g_core::session::{
    parse_client, ClientMessage, Envelope, ServerMessage, Session, SessionConfig, SessionError, SessionOutput,
};
use sb2g_core::WorldScenario;
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::sync::{broadcast, mpsc};
use tokio_tungstenite::tungstenite::Message;

/// Wall seconds between snapshots while the session is not running.
const IDLE_SNAPSHOT_PERIOD: f64 = 0.1;
const OUTBOX_CAPACITY: usize = 1024;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("network: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("speed must be a positive finite factor, got {0}")]
    Speed(f64),
}

enum Inbound {
    Connected,
    Disconnected,
    Message(ClientMessage),
}

pub struct Server {
    listener: TcpListener,
    session: Session,
    /// Simulated seconds per wall second.
    speed: f64,
}

impl Server {
    pub async fn bind(
        addr: impl ToSocketAddrs,
        scenario: &WorldScenario,
        config: SessionConfig,
        speed: f64,
    ) -> Result<Self, ServerError> {
        if !(speed.is_finite() && speed > 0.0) {
            return Err(ServerError::Speed(speed));
        }
        let session = Session::new(scenario, config)?;
        let listener = TcpListener::bind(addr).await?;
        Ok(Self {
            listener,
            session,
            speed,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Run the session to its end and return its trace.
    pub async fn run(self) -> Result<SessionOutput, ServerError> {
        let Self {
            listener,
            mut session,
            speed,
        } = self;
        let (in_tx, mut in_rx) = mpsc::unbounded_channel();
        let (out_tx, _) = broadcast::channel::<String>(OUTBOX_CAPACITY);
        let acceptor = tokio::spawn(accept_loop(listener, in_tx, out_tx.clone()));

        let tick_rate = session.simulation().world.tick_rate;
        let period = 1.0 / (tick_rate * speed);
        let idle_every = (IDLE_SNAPSHOT_PERIOD / period).round().max(1.0) as u64;
        let mut clock = tokio::time::interval(Duration::from_secs_f64(period));
        clock.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        let mut clients = 0usize;
        let mut idle_ticks = 0u64;
        let send = |tick: u64, m: ServerMessage| {
            // no receivers is fine: nobody is watching
            let _ = out_tx.send(Envelope::new(tick, m).to_json());
        };

        while session.ended().is_none() {
            clock.tick().await;
            while let Ok(msg) = in_rx.try_recv() {
                match msg {
                    Inbound::Connected => {
                        clients += 1;
                        session.reconnect();
                        send(session.tick(), ServerMessage::Snapshot(Box::new(session.snapshot())));
                    }
                    Inbound::Disconnected => {
                        clients = clients.saturating_sub(1);
                        if clients == 0 {
                            session.disconnect();
                        }
                    }
                    Inbound::Message(m) => {
                        if let Err(e) = session.submit(m) {
                            eprintln!("sb2g-server: {e}");
                        }
                    }
                }
            }
            let out = if session.is_running() {
                idle_ticks = 0;
                session.step()?
            } else {
                idle_ticks += 1;
                let mut out = session.idle(period);
                if out.is_empty() && idle_ticks.is_multiple_of(idle_every) {
                    out.push(ServerMessage::Snapshot(Box::new(session.snapshot())));
                }
                out
            };
            for m in out {
                send(session.tick(), m);
            }
        }
        acceptor.abort();
        // closing the outbox lets each writer flush and close its socket
        drop(out_tx);
        Ok(session.finish()?)
    }
}

async fn accept_loop(listener: TcpListener, inbox: mpsc::UnboundedSender<Inbound>, outbox: broadcast::Sender<String>) {
    loop {
        let Ok((stream, _)) = listener.accept().await else { continue };
        let rx = outbox.subscribe();
        tokio::spawn(connection(stream, inbox.clone(), rx));
    }
}

async fn connection(stream: TcpStream, inbox: mpsc::UnboundedSender<Inbound>, mut outbox: broadcast::Receiver<String>) {
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            eprintln!("sb2g-server: handshake failed: {e}");
            return;
        }
    };
    let (mut sink, mut source) = ws.split();
    let _ = inbox.send(Inbound::Connected);
    let writer = tokio::spawn(async move {
        loop {
            match outbox.recv().await {
                Ok(text) => {
                    if sink.send(Message::text(text)).await.is_err() {
                        break;
                    }
                }
                // a slow client skips frames; the next snapshot resynchronizes it
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => {
                    let _ = sink.close().await;
                    break;
                }
            }
        }
    });
    while let Some(frame) = source.next().await {
        match frame {
            Ok(Message::Text(text)) => match parse_client(&text) {
                Ok(env) => {
                    let _ = inbox.send(Inbound::Message(env.message));
                }
                Err(e) => eprintln!("sb2g-server: ignoring message: {e}"),
            },
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => {}
        }
    }
    let _ = inbox.send(Inbound::Disconnected);
    if !writer.is_finished() {
        writer.abort();
    }
}
