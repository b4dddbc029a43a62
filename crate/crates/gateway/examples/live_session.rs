//! Starts the server in-process, streams a synthetic operator session over
//! WebSocket in real time and prints what an observer sees, ending with an
//! emergency stop.

use std::path::Path;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::time::{sleep_until, Instant};
use tokio_tungstenite::connect_async;
use tokio_tungstenite::tungstenite::Message;

use teleop_core::session::{generate_synthetic, TrajectorySpec};
use teleop_gateway::config::ServeConfig;
use teleop_gateway::protocol::{decode, encode, ClientMessage, Role, ServerMessage};
use teleop_gateway::server;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let config = ServeConfig::load(&root.join("config/teleop.toml"))?;
    let srv = server::bind("127.0.0.1:0".parse()?, config).await?;
    let url = format!("ws://{}", srv.local_addr());
    tokio::spawn(srv.run_until(std::future::pending()));

    let (mut operator, _) = connect_async(&url).await?;
    operator.send(Message::text(encode(&ClientMessage::Hello { role: Role::Operator }))).await?;
    let (mut observer, _) = connect_async(&url).await?;
    observer.send(Message::text(encode(&ClientMessage::Hello { role: Role::Observer }))).await?;

    let watcher = tokio::spawn(async move {
        while let Some(Ok(Message::Text(text))) = observer.next().await {
            match decode::<ServerMessage>(&text) {
                Ok(ServerMessage::State(s)) => println!(
                    "{:6} ms  {:<40} fingers {}  ee {}  {:?}",
                    s.t_ms,
                    format!("{:?}", s.mode),
                    s.gesture.finger_count,
                    s.arm.ee_position(),
                    s.safety
                ),
                Ok(other) => println!("observer got {other:?}"),
                Err(e) => println!("undecodable broadcast: {e}"),
            }
        }
    });

    let spec =
        TrajectorySpec::from_toml(&std::fs::read_to_string(root.join("crates/core/fixtures/three_speed.toml"))?)?;
    let frames = generate_synthetic(&spec)?.frames;
    let start = Instant::now();
    for frame in frames.into_iter().take(180) {
        sleep_until(start + Duration::from_millis(frame.t_ms)).await;
        operator.send(Message::text(encode(&ClientMessage::Frame { frame }))).await?;
    }
    println!("-- estop --");
    operator.send(Message::text(encode(&ClientMessage::Estop))).await?;
    tokio::time::sleep(Duration::from_millis(450)).await;
    watcher.abort();
    Ok(())
}
