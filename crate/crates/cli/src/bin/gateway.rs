use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, ValueEnum};
use icare_cli::init_tracing;
use icare_cli::node::{GatewayNode, NodeEvent, NodeInput, NodeLinks};
use icare_cli::sim::run_sim;
use icare_core::gateway::{Gateway, GatewayConfig, PromptResponse, SystemMode};
use icare_core::protocol::{Timestamp, VitalChannel, VitalRecord};
use icare_service::{Clock, SystemClock};
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::net::TcpListener;
use tokio::sync::mpsc;

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Live,
    Sim,
}

/// The home gateway. `sim` reads samples, scheduled events and SMS lines as
/// JSON lines on stdin and runs in virtual time from 0. `live` runs on unix
/// time: it listens for sensor samples on TCP, talks to a running
/// `icare serve`, and reads user commands (cancel CH, confirm CH, quick,
/// pause, resume) on stdin. Effects are printed as JSON lines in both modes.
#[derive(Parser)]
#[command(name = "gateway", version)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    /// sim: keep ticking to this time after the last input.
    #[arg(long)]
    until: Option<Timestamp>,
    /// live: where sensors connect.
    #[arg(long, default_value = "127.0.0.1:7400")]
    sensors: SocketAddr,
    #[arg(long, default_value = "127.0.0.1:7401")]
    bulk: SocketAddr,
    #[arg(long, default_value = "127.0.0.1:7402")]
    intake: SocketAddr,
    #[arg(long, default_value = "127.0.0.1:7403")]
    bus: SocketAddr,
    /// live: the alarm target that is the emergency centre. Defaults to the
    /// first configured target.
    #[arg(long)]
    emergency_target: Option<String>,
}

fn print_event(e: &NodeEvent) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer(&mut out, e);
    let _ = out.write_all(b"\n");
    let _ = out.flush();
}

fn parse_command(line: &str) -> Result<NodeInput, String> {
    let words: Vec<&str> = line.split_whitespace().collect();
    let channel = |w: Option<&&str>| -> Result<VitalChannel, String> {
        w.ok_or("missing channel")?.parse().map_err(|e| format!("{e}"))
    };
    match words.first().copied() {
        Some("cancel") => Ok(NodeInput::Prompt(channel(words.get(1))?, PromptResponse::Cancel)),
        Some("confirm") => Ok(NodeInput::Prompt(channel(words.get(1))?, PromptResponse::Confirm)),
        Some("quick") => Ok(NodeInput::Quick),
        Some("pause") => Ok(NodeInput::Mode(SystemMode::Paused)),
        Some("resume") => Ok(NodeInput::Mode(SystemMode::Monitoring)),
        _ => Err(format!("unknown command {line:?}")),
    }
}

async fn accept_sensors(listener: TcpListener, inputs: mpsc::Sender<NodeInput>) {
    loop {
        let Ok((stream, peer)) = listener.accept().await else {
            continue;
        };
        tracing::info!(%peer, "sensor connected");
        let inputs = inputs.clone();
        tokio::spawn(async move {
            let mut lines = BufReader::new(stream).lines();
            while let Ok(Some(line)) = lines.next_line().await {
                match serde_json::from_str::<VitalRecord>(&line) {
                    Ok(r) => {
                        if inputs.send(NodeInput::Sample(r)).await.is_err() {
                            return;
                        }
                    }
                    Err(e) => tracing::warn!(%peer, "bad sample line: {e}"),
                }
            }
            tracing::info!(%peer, "sensor disconnected");
        });
    }
}

async fn read_commands(inputs: mpsc::Sender<NodeInput>) {
    let mut lines = BufReader::new(tokio::io::stdin()).lines();
    while let Ok(Some(line)) = lines.next_line().await {
        if line.trim().is_empty() {
            continue;
        }
        match parse_command(&line) {
            Ok(input) => {
                if inputs.send(input).await.is_err() {
                    return;
                }
            }
            Err(e) => eprintln!("{e}"),
        }
    }
}

async fn live(args: Args, config: GatewayConfig) -> Result<(), String> {
    let target = args
        .emergency_target
        .clone()
        .or_else(|| config.alarm_targets.first().cloned())
        .ok_or("no alarm targets configured")?;
    let clock = Arc::new(SystemClock);
    let gateway = Gateway::new(config, clock.now()).map_err(|e| e.to_string())?;
    let links = NodeLinks {
        bulk: args.bulk,
        sms_bus: args.bus,
        sms_intake: args.intake,
    };
    let (events_tx, mut events_rx) = mpsc::unbounded_channel();
    let (input_tx, input_rx) = mpsc::channel(256);
    let listener = TcpListener::bind(args.sensors)
        .await
        .map_err(|e| format!("{}: {e}", args.sensors))?;
    tracing::info!("sensors on {}", args.sensors);
    tokio::spawn(accept_sensors(listener, input_tx.clone()));
    tokio::spawn(read_commands(input_tx));
    tokio::spawn(async move {
        while let Some(e) = events_rx.recv().await {
            print_event(&e);
        }
    });
    let node = GatewayNode::new(gateway, clock, links, target, events_tx);
    tokio::select! {
        r = node.run(input_rx) => r.map(|_| ()).map_err(|e| e.to_string()),
        _ = tokio::signal::ctrl_c() => Ok(()),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    init_tracing();
    let args = Args::parse();
    let result = async {
        let text = std::fs::read_to_string(&args.config).map_err(|e| format!("{}: {e}", args.config.display()))?;
        let config = GatewayConfig::from_toml(&text).map_err(|e| format!("{}: {e}", args.config.display()))?;
        match args.mode {
            Mode::Sim => {
                let gateway = Gateway::new(config, 0).map_err(|e| e.to_string())?;
                let stdin = std::io::stdin().lock();
                let gw = run_sim(gateway, stdin, args.until, |e| print_event(&e)).map_err(|e| e.to_string())?;
                tracing::info!(
                    records = gw.store().records().len(),
                    pending = gw.store().pending_len(),
                    "done"
                );
                Ok(())
            }
            Mode::Live => live(args, config).await,
        }
    }
    .await;
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commands() {
        assert_eq!(
            parse_command("cancel ECG_HR").unwrap(),
            NodeInput::Prompt(VitalChannel::EcgHr, PromptResponse::Cancel)
        );
        assert_eq!(parse_command(" quick ").unwrap(), NodeInput::Quick);
        assert!(parse_command("cancel").is_err());
        assert!(parse_command("cancel XYZ").is_err());
        assert!(parse_command("dance").is_err());
    }
}
