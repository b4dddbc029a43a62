//! WebSocket server. One control task owns the engine; connection tasks only
//! decode, validate and forward. State fans out through a bounded broadcast
//! channel, so a slow client loses its oldest snapshots instead of slowing
//! the control loop.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc};
use tokio_tungstenite::tungstenite::Message;

use teleop_core::control::COMMAND_PERIOD_MS;
use teleop_core::frame::LandmarkFrame;
use teleop_core::pipeline::{Engine, EngineError};

use crate::config::ServeConfig;
use crate::protocol::{
    decode, encode, ClientMessage, DecodeError, ErrorCode, Role, ServerMessage, StateBroadcast, WristView,
};
use crate::GatewayError;

const DIRECT_QUEUE: usize = 64;
const CONTROL_QUEUE: usize = 256;

enum Control {
    Frame { conn: u64, frame: LandmarkFrame },
    Reset { conn: u64 },
    Estop { conn: u64 },
    Joined { conn: u64, replies: mpsc::Sender<ServerMessage> },
    Left { conn: u64 },
}

pub struct Server {
    listener: TcpListener,
    config: ServeConfig,
}

/// Binds the listening socket. An address already in use is reported as
/// [`GatewayError::PortInUse`].
pub async fn bind(addr: SocketAddr, config: ServeConfig) -> Result<Server, GatewayError> {
    config.engine_config()?;
    let listener = TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => GatewayError::PortInUse(addr),
        _ => GatewayError::Io(e),
    })?;
    Ok(Server { listener, config })
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub async fn run_until(self, shutdown: impl Future<Output = ()>) -> Result<(), GatewayError> {
        let engine = Engine::new(self.config.engine_config()?).map_err(|e| GatewayError::Config(e.to_string()))?;
        let (state_tx, _) = broadcast::channel::<Arc<str>>(self.config.broadcast_buffer);
        let (control_tx, control_rx) = mpsc::channel(CONTROL_QUEUE);
        let operator = Arc::new(Mutex::new(None::<u64>));

        let control = tokio::spawn(control_loop(engine, control_rx, state_tx.clone()));
        let mut next_conn = 0u64;
        tokio::pin!(shutdown);
        loop {
            tokio::select! {
                _ = &mut shutdown => break,
                accepted = self.listener.accept() => {
                    let (stream, peer) = match accepted {
                        Ok(s) => s,
                        Err(e) => {
                            log::warn!("accept failed: {e}");
                            continue;
                        }
                    };
                    next_conn += 1;
                    let conn = Connection {
                        id: next_conn,
                        control: control_tx.clone(),
                        states: state_tx.subscribe(),
                        operator: operator.clone(),
                    };
                    tokio::spawn(async move {
                        if let Err(e) = conn.serve(stream).await {
                            log::debug!("connection from {peer} ended: {e}");
                        }
                    });
                }
            }
        }
        drop(control_tx);
        control.abort();
        Ok(())
    }
}

fn state_of(engine: &Engine, t_ms: u64) -> StateBroadcast {
    let arm = engine.arm_state().clone();
    StateBroadcast {
        t_ms,
        mode: engine.control_state(),
        gesture: *engine.gesture(),
        wrist: engine.latest_wrist().map(|w| WristView {
            marker: w.position_marker,
            robot: engine.wrist_robot(),
            velocity_mps: w.velocity_mps,
            fresh: w.fresh,
        }),
        safety: arm.safety,
        arm,
        objects: engine.scene().objects.clone(),
        last_command: engine.last_command().cloned(),
        routine: engine.routine_status().cloned(),
    }
}

async fn control_loop(mut engine: Engine, mut rx: mpsc::Receiver<Control>, states: broadcast::Sender<Arc<str>>) {
    let start = Instant::now();
    let clock = move || start.elapsed().as_millis() as u64;
    let mut ticker = tokio::time::interval(Duration::from_millis(COMMAND_PERIOD_MS));
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut replies: Vec<(u64, mpsc::Sender<ServerMessage>)> = Vec::new();
    let mut last_frame_ms: Option<u64> = None;

    let reply = |replies: &[(u64, mpsc::Sender<ServerMessage>)], conn: u64, msg: ServerMessage| {
        if let Some((_, tx)) = replies.iter().find(|(id, _)| *id == conn) {
            let _ = tx.try_send(msg);
        }
    };

    loop {
        tokio::select! {
            _ = ticker.tick() => {
                let now = clock();
                if let Err(e) = engine.advance_to(now) {
                    log::error!("engine step failed: {e}");
                }
                for event in engine.drain_events() {
                    log::debug!("{event:?}");
                }
                let text: Arc<str> = encode(&ServerMessage::State(Box::new(state_of(&engine, now)))).into();
                // no subscribers is fine
                let _ = states.send(text);
            }
            msg = rx.recv() => {
                let Some(msg) = msg else { break };
                match msg {
                    Control::Joined { conn, replies: tx } => replies.push((conn, tx)),
                    Control::Left { conn } => replies.retain(|(id, _)| *id != conn),
                    Control::Reset { conn } => {
                        log::info!("reset from connection {conn}");
                        if let Err(e) = engine.reset() {
                            reply(&replies, conn, engine_error(&e, None));
                        }
                    }
                    Control::Estop { conn } => {
                        log::warn!("estop from connection {conn}");
                        if let Err(e) = engine.estop() {
                            reply(&replies, conn, engine_error(&e, None));
                        }
                    }
                    Control::Frame { conn, mut frame } => {
                        // restamp onto the server clock; client order was checked upstream
                        let client_t = frame.t_ms;
                        let t = clock().max(last_frame_ms.map_or(0, |l| l + 1));
                        frame.t_ms = t;
                        match engine.process_frame(&frame) {
                            Ok(()) => last_frame_ms = Some(t),
                            Err(e) => reply(&replies, conn, engine_error(&e, Some(client_t))),
                        }
                    }
                }
            }
        }
    }
}

fn engine_error(e: &EngineError, t_ms: Option<u64>) -> ServerMessage {
    let code = match e {
        EngineError::InvalidFrame { .. } => ErrorCode::InvalidFrame,
        EngineError::OutOfOrder { .. } => ErrorCode::OutOfOrder,
        _ => ErrorCode::Engine,
    };
    ServerMessage::Error { code, message: e.to_string(), t_ms }
}

struct Connection {
    id: u64,
    control: mpsc::Sender<Control>,
    states: broadcast::Receiver<Arc<str>>,
    operator: Arc<Mutex<Option<u64>>>,
}

impl Connection {
    async fn serve(self, stream: TcpStream) -> Result<(), GatewayError> {
        let ws = tokio_tungstenite::accept_async(stream).await.map_err(GatewayError::WebSocket)?;
        let (mut sink, mut source) = ws.split();

        let role = loop {
            let Some(msg) = source.next().await else { return Ok(()) };
            let text = match msg.map_err(GatewayError::WebSocket)? {
                Message::Text(t) => t,
                Message::Close(_) => return Ok(()),
                _ => continue,
            };
            match decode::<ClientMessage>(&text) {
                Ok(ClientMessage::Hello { role }) => break role,
                Ok(_) => {
                    let msg = ServerMessage::Error {
                        code: ErrorCode::ExpectedHello,
                        message: "send hello first".into(),
                        t_ms: None,
                    };
                    sink.send(Message::text(encode(&msg))).await.map_err(GatewayError::WebSocket)?;
                }
                Err(e @ DecodeError::VersionMismatch { .. }) => {
                    let msg = ServerMessage::Refused { reason: e.to_string() };
                    sink.send(Message::text(encode(&msg))).await.map_err(GatewayError::WebSocket)?;
                    let _ = sink.close().await;
                    return Ok(());
                }
                Err(e) => {
                    let msg =
                        ServerMessage::Error { code: ErrorCode::MalformedMessage, message: e.to_string(), t_ms: None };
                    sink.send(Message::text(encode(&msg))).await.map_err(GatewayError::WebSocket)?;
                }
            }
        };

        let granted = self.grant(role);
        let note = (role == Role::Operator && granted == Role::Observer)
            .then(|| "another client is the operator; connected read-only".to_string());
        sink.send(Message::text(encode(&ServerMessage::Welcome { role: granted, note })))
            .await
            .map_err(GatewayError::WebSocket)?;
        log::info!("connection {} joined as {granted:?}", self.id);

        let (reply_tx, mut reply_rx) = mpsc::channel::<ServerMessage>(DIRECT_QUEUE);
        let _ = self.control.send(Control::Joined { conn: self.id, replies: reply_tx.clone() }).await;

        let mut states = self.states.resubscribe();
        let writer = tokio::spawn(async move {
            loop {
                let text: String = tokio::select! {
                    direct = reply_rx.recv() => match direct {
                        Some(m) => encode(&m),
                        None => break,
                    },
                    state = states.recv() => match state {
                        Ok(s) => s.to_string(),
                        Err(broadcast::error::RecvError::Lagged(n)) => {
                            log::debug!("client lagging, dropped {n} broadcasts");
                            continue;
                        }
                        Err(broadcast::error::RecvError::Closed) => break,
                    },
                };
                if sink.send(Message::text(text)).await.is_err() {
                    break;
                }
            }
        });

        let mut last_client_t: Option<u64> = None;
        while let Some(msg) = source.next().await {
            let text = match msg {
                Ok(Message::Text(t)) => t,
                Ok(Message::Close(_)) | Err(_) => break,
                Ok(_) => continue,
            };
            let error =
                |code: ErrorCode, message: String, t_ms: Option<u64>| ServerMessage::Error { code, message, t_ms };
            let outcome = match decode::<ClientMessage>(&text) {
                Err(e) => Err(error(ErrorCode::MalformedMessage, e.to_string(), None)),
                Ok(ClientMessage::Hello { .. }) => {
                    Err(error(ErrorCode::MalformedMessage, "hello was already received".into(), None))
                }
                Ok(ClientMessage::Estop) => Ok(Control::Estop { conn: self.id }),
                Ok(_) if granted != Role::Operator => {
                    Err(error(ErrorCode::NotOperator, "observers may only send estop".into(), None))
                }
                Ok(ClientMessage::Reset) => Ok(Control::Reset { conn: self.id }),
                Ok(ClientMessage::Frame { frame }) => {
                    if let Some(last) = last_client_t.filter(|&l| frame.t_ms <= l) {
                        Err(error(
                            ErrorCode::OutOfOrder,
                            format!("t_ms {} is not after {last}", frame.t_ms),
                            Some(frame.t_ms),
                        ))
                    } else if let Err(reason) = frame.validate() {
                        Err(error(ErrorCode::InvalidFrame, reason, Some(frame.t_ms)))
                    } else {
                        last_client_t = Some(frame.t_ms);
                        Ok(Control::Frame { conn: self.id, frame })
                    }
                }
            };
            match outcome {
                Ok(control) => {
                    if self.control.send(control).await.is_err() {
                        break;
                    }
                }
                Err(reply) => {
                    let _ = reply_tx.try_send(reply);
                }
            }
        }

        let _ = self.control.send(Control::Left { conn: self.id }).await;
        self.release();
        drop(reply_tx);
        writer.abort();
        log::info!("connection {} left", self.id);
        Ok(())
    }

    fn grant(&self, requested: Role) -> Role {
        if requested == Role::Observer {
            return Role::Observer;
        }
        let mut op = self.operator.lock().expect("operator lock");
        if op.is_none() {
            *op = Some(self.id);
            Role::Operator
        } else {
            Role::Observer
        }
    }

    fn release(&self) {
        let mut op = self.operator.lock().expect("operator lock");
        if *op == Some(self.id) {
            *op = None;
        }
    }
}
