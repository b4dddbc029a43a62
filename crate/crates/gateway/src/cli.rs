use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use teleop_core::session::{generate_synthetic, replay, SessionError, SessionRecord, TrajectorySpec};

use crate::config::ServeConfig;
use crate::GatewayError;

#[derive(Debug, Parser)]
#[command(name = "teleop", version, about = "Gesture-driven arm teleoperation: live server, replay and synthesis")]
pub struct Cli {
    /// off, error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "info")]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Accept landmark streams over WebSocket and drive the simulated arm.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
    },
    /// Re-run a recorded session and write the precision report.
    Replay {
        #[arg(long)]
        session: PathBuf,
        /// Report JSON; the per-sample CSV goes next to it with a .csv extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic session from a trajectory spec.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Session { path: String, source: SessionError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn session_err(path: &Path) -> impl FnOnce(SessionError) -> CliError + '_ {
    move |source| match source {
        SessionError::Io { path, source } => CliError::Io { path, source },
        source => CliError::Session { path: path.display().to_string(), source },
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

pub fn run_replay(session: &Path, out: &Path) -> Result<String, CliError> {
    let record = SessionRecord::load(session).map_err(session_err(session))?;
    let output = replay(&record).map_err(session_err(session))?;
    write(out, &output.report.to_json())?;
    write(&out.with_extension("csv"), &output.report.to_csv())?;
    Ok(output.report.summary())
}

pub fn run_simulate(spec: &Path, out: &Path) -> Result<String, CliError> {
    let text =
        std::fs::read_to_string(spec).map_err(|source| CliError::Io { path: spec.display().to_string(), source })?;
    let spec_parsed = TrajectorySpec::from_toml(&text).map_err(session_err(spec))?;
    let record = generate_synthetic(&spec_parsed).map_err(session_err(spec))?;
    write(out, &record.to_jsonl())?;
    Ok(format!("wrote {} frames ({} ms) to {}", record.frames.len(), spec_parsed.duration_ms(), out.display()))
}

pub async fn run_serve(host: IpAddr, port: u16, config: &Path) -> Result<(), CliError> {
    let cfg = ServeConfig::load(config)?;
    let server = crate::server::bind(SocketAddr::new(host, port), cfg).await?;
    log::info!("listening on ws://{}", server.local_addr());
    server
        .run_until(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await?;
    Ok(())
}
