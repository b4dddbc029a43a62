use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio::sync::oneshot;
use tokio::time::{sleep, timeout, Instant};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use teleop_core::control::{CommandKind, ControlState};
use teleop_core::frame::LandmarkFrame;
use teleop_core::session::{generate_synthetic, TrajectorySpec};
use teleop_gateway::config::ServeConfig;
use teleop_gateway::protocol::{decode, encode, ClientMessage, ErrorCode, Role, ServerMessage, StateBroadcast};
use teleop_gateway::server;

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

struct Running {
    addr: SocketAddr,
    _stop: oneshot::Sender<()>,
}

async fn start() -> Running {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/teleop.toml");
    let config = ServeConfig::load(&path).unwrap();
    let server = server::bind("127.0.0.1:0".parse().unwrap(), config).await.unwrap();
    let addr = server.local_addr();
    let (stop, stopped) = oneshot::channel::<()>();
    tokio::spawn(server.run_until(async {
        let _ = stopped.await;
    }));
    Running { addr, _stop: stop }
}

async fn connect(addr: SocketAddr) -> Ws {
    connect_async(format!("ws://{addr}")).await.unwrap().0
}

async fn send(ws: &mut Ws, msg: &ClientMessage) {
    ws.send(Message::text(encode(msg))).await.unwrap();
}

async fn recv(ws: &mut Ws) -> Option<ServerMessage> {
    loop {
        match timeout(Duration::from_secs(3), ws.next()).await.expect("server went quiet")? {
            Ok(Message::Text(t)) => return Some(decode(&t).unwrap()),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
}

/// Next message that is not a state broadcast.
async fn recv_reply(ws: &mut Ws) -> ServerMessage {
    loop {
        match recv(ws).await.expect("connection closed") {
            ServerMessage::State(_) => continue,
            other => return other,
        }
    }
}

async fn recv_state(ws: &mut Ws) -> StateBroadcast {
    loop {
        if let ServerMessage::State(s) = recv(ws).await.expect("connection closed") {
            return *s;
        }
    }
}

async fn join(addr: SocketAddr, role: Role) -> (Ws, Role, Option<String>) {
    let mut ws = connect(addr).await;
    send(&mut ws, &ClientMessage::Hello { role }).await;
    match recv_reply(&mut ws).await {
        ServerMessage::Welcome { role, note } => (ws, role, note),
        other => panic!("expected welcome, got {other:?}"),
    }
}

fn stationary_frames() -> Vec<LandmarkFrame> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/stationary.toml");
    let spec = TrajectorySpec::from_toml(&std::fs::read_to_string(path).unwrap()).unwrap();
    generate_synthetic(&spec).unwrap().frames
}

#[tokio::test]
async fn state_is_broadcast_at_five_hertz() {
    let srv = start().await;
    let (mut ws, role, _) = join(srv.addr, Role::Observer).await;
    assert_eq!(role, Role::Observer);
    let first = recv_state(&mut ws).await;
    let began = Instant::now();
    let mut stamps = vec![first.t_ms];
    while began.elapsed() < Duration::from_millis(2000) {
        stamps.push(recv_state(&mut ws).await.t_ms);
    }
    let n = stamps.len() - 1;
    assert!((9..=11).contains(&n), "{n} broadcasts in 2 s");
    for w in stamps.windows(2) {
        let dt = w[1] - w[0];
        assert!((150..=250).contains(&dt), "broadcast gap {dt} ms");
    }
    assert_eq!(first.mode, ControlState::Idle);
}

#[tokio::test]
async fn only_one_operator_at_a_time() {
    let srv = start().await;
    let (first, role, note) = join(srv.addr, Role::Operator).await;
    assert_eq!((role, note), (Role::Operator, None));

    let (mut second, role, note) = join(srv.addr, Role::Operator).await;
    assert_eq!(role, Role::Observer);
    assert!(note.unwrap().contains("operator"));
    send(&mut second, &ClientMessage::Frame { frame: stationary_frames()[0].clone() }).await;
    match recv_reply(&mut second).await {
        ServerMessage::Error { code, .. } => assert_eq!(code, ErrorCode::NotOperator),
        other => panic!("{other:?}"),
    }
    send(&mut second, &ClientMessage::Reset).await;
    assert!(matches!(recv_reply(&mut second).await, ServerMessage::Error { code: ErrorCode::NotOperator, .. }));

    drop(first);
    sleep(Duration::from_millis(100)).await;
    let (_third, role, _) = join(srv.addr, Role::Operator).await;
    assert_eq!(role, Role::Operator);
}

#[tokio::test]
async fn estop_returns_to_idle_within_one_tick() {
    let srv = start().await;
    let (mut op, _, _) = join(srv.addr, Role::Operator).await;
    let (mut watch, _, _) = join(srv.addr, Role::Observer).await;

    let frames = stationary_frames();
    let began = Instant::now();
    let mut manual = false;
    for (k, frame) in frames.iter().enumerate().take(90) {
        tokio::time::sleep_until(began + Duration::from_millis(frame.t_ms)).await;
        send(&mut op, &ClientMessage::Frame { frame: frame.clone() }).await;
        if k % 6 == 5 {
            while let Ok(Some(Ok(Message::Text(t)))) = timeout(Duration::from_millis(1), watch.next()).await {
                if let Ok(ServerMessage::State(s)) = decode::<ServerMessage>(&t) {
                    manual |= s.mode == ControlState::Manual;
                }
            }
        }
    }
    for _ in 0..3 {
        manual |= recv_state(&mut watch).await.mode == ControlState::Manual;
    }
    assert!(manual, "operator never reached manual mode");

    send(&mut op, &ClientMessage::Estop).await;
    let sent = Instant::now();
    // the broadcast already in flight may predate the estop; the next one must not
    let mut state = recv_state(&mut watch).await;
    if state.mode != ControlState::Idle {
        state = recv_state(&mut watch).await;
    }
    assert_eq!(state.mode, ControlState::Idle);
    assert!(sent.elapsed() < Duration::from_millis(450));
    assert!(state.last_command.is_none_or(|c| !matches!(c.kind, CommandKind::MoveEe { .. })));
}

#[tokio::test]
async fn observers_may_estop() {
    let srv = start().await;
    let (mut obs, _, _) = join(srv.addr, Role::Observer).await;
    send(&mut obs, &ClientMessage::Estop).await;
    let s = recv_state(&mut obs).await;
    assert_eq!(s.mode, ControlState::Idle);
}

#[tokio::test]
async fn malformed_messages_get_an_error_and_the_connection_survives() {
    let srv = start().await;
    let (mut ws, _, _) = join(srv.addr, Role::Operator).await;
    ws.send(Message::text("{not json")).await.unwrap();
    assert!(matches!(recv_reply(&mut ws).await, ServerMessage::Error { code: ErrorCode::MalformedMessage, .. }));
    ws.send(Message::text(r#"{"v":1,"type":"teleport"}"#)).await.unwrap();
    assert!(matches!(recv_reply(&mut ws).await, ServerMessage::Error { code: ErrorCode::MalformedMessage, .. }));
    ws.send(Message::text(r#"{"v":1,"type":"frame","frame":{"t_ms":5}}"#)).await.unwrap();
    assert!(matches!(recv_reply(&mut ws).await, ServerMessage::Error { code: ErrorCode::InvalidFrame, .. }));
    recv_state(&mut ws).await;
}

#[tokio::test]
async fn hello_must_come_first() {
    let srv = start().await;
    let mut ws = connect(srv.addr).await;
    send(&mut ws, &ClientMessage::Estop).await;
    assert!(matches!(recv(&mut ws).await, Some(ServerMessage::Error { code: ErrorCode::ExpectedHello, .. })));
    send(&mut ws, &ClientMessage::Hello { role: Role::Observer }).await;
    assert!(matches!(recv(&mut ws).await, Some(ServerMessage::Welcome { role: Role::Observer, .. })));
}

#[tokio::test]
async fn other_protocol_versions_are_refused() {
    let srv = start().await;
    let mut ws = connect(srv.addr).await;
    ws.send(Message::text(r#"{"v":2,"type":"hello","role":"operator"}"#)).await.unwrap();
    match recv(&mut ws).await {
        Some(ServerMessage::Refused { reason }) => assert!(reason.contains('2'), "{reason}"),
        other => panic!("{other:?}"),
    }
    assert!(recv(&mut ws).await.is_none(), "connection should close");

    // the refused client never held the operator seat
    let (_op, role, _) = join(srv.addr, Role::Operator).await;
    assert_eq!(role, Role::Operator);
}

#[tokio::test]
async fn out_of_order_frames_are_rejected() {
    let srv = start().await;
    let (mut ws, _, _) = join(srv.addr, Role::Operator).await;
    let frames = stationary_frames();
    let mut later = frames[3].clone();
    let mut earlier = frames[2].clone();
    later.t_ms = 500;
    earlier.t_ms = 400;
    send(&mut ws, &ClientMessage::Frame { frame: later }).await;
    send(&mut ws, &ClientMessage::Frame { frame: earlier }).await;
    match recv_reply(&mut ws).await {
        ServerMessage::Error { code, t_ms, .. } => {
            assert_eq!(code, ErrorCode::OutOfOrder);
            assert_eq!(t_ms, Some(400));
        }
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn a_stalled_client_does_not_disturb_the_tick() {
    let srv = start().await;
    // joins, then provokes thousands of error replies it never reads
    let (mut stalled, _, _) = join(srv.addr, Role::Observer).await;
    let flood = tokio::spawn(async move {
        let junk = format!("{{\"v\":1,\"type\":\"{}\"}}", "x".repeat(4096));
        for _ in 0..5000 {
            if stalled.send(Message::text(junk.clone())).await.is_err() {
                break;
            }
        }
        stalled
    });
    let (mut op, _, _) = join(srv.addr, Role::Operator).await;
    let (mut healthy, _, _) = join(srv.addr, Role::Observer).await;

    let frames = stationary_frames();
    let feeder = tokio::spawn(async move {
        let began = Instant::now();
        for frame in frames.into_iter().take(75) {
            tokio::time::sleep_until(began + Duration::from_millis(frame.t_ms)).await;
            send(&mut op, &ClientMessage::Frame { frame }).await;
        }
        op
    });

    let mut stamps = Vec::new();
    let began = Instant::now();
    while began.elapsed() < Duration::from_millis(2600) {
        stamps.push(recv_state(&mut healthy).await.t_ms);
    }
    feeder.await.unwrap();
    let _stalled = flood.await.unwrap();
    assert!(stamps.len() >= 12, "{} broadcasts", stamps.len());
    for w in stamps.windows(2) {
        let dt = w[1] - w[0];
        assert!((150..=250).contains(&dt), "broadcast gap {dt} ms");
    }
}
