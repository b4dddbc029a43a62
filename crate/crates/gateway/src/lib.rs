//! Streaming boundary for the teleoperation engine: a WebSocket server that
//! ingests landmark frames from one operator and fans arm state out to every
//! connected client, plus the `teleop` command-line entry points.

pub mod cli;
pub mod config;
pub mod protocol;
pub mod server;

use std::net::SocketAddr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("address {0} is already in use")]
    PortInUse(SocketAddr),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("websocket: {0}")]
    WebSocket(tokio_tungstenite::tungstenite::Error),
}
