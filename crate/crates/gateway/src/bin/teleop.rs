use std::process::ExitCode;

use clap::Parser;

use teleop_gateway::cli::{run_replay, run_serve, run_simulate, Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp_millis().init();

    let result = match cli.command {
        Command::Serve { port, config, host } => tokio::runtime::Runtime::new()
            .map_err(|e| teleop_gateway::GatewayError::Io(e).into())
            .and_then(|rt| rt.block_on(run_serve(host, port, &config)))
            .map(|()| String::new()),
        Command::Replay { session, out } => run_replay(&session, &out),
        Command::Simulate { spec, out } => run_simulate(&spec, &out),
    };
    match result {
        Ok(msg) => {
            if !msg.is_empty() {
                println!("{msg}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
