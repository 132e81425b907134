use std::net::SocketAddr;
use std::process::ExitCode;

use clap::Parser;
use icare_cli::emit::{samples, stream_to, write_lines};
use icare_cli::scenario_from;
use icare_service::{Clock, SystemClock};

/// Simulated body sensors. Prints a scenario's samples as JSON lines with
/// scenario timestamps, or streams them in real time to a live gateway's
/// sensor port, shifted so that scenario time 0 is the moment of launch.
#[derive(Parser)]
#[command(name = "sensors", version)]
struct Args {
    /// A scenario file or the name of a shipped demo.
    #[arg(long)]
    scenario: String,
    /// `stdout` or a gateway's sensor address (host:port).
    #[arg(long, default_value = "stdout")]
    emit: String,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let result = async {
        let scenario = scenario_from(&args.scenario)?;
        let mut records = samples(&scenario);
        if args.emit == "stdout" {
            match write_lines(&records, std::io::stdout().lock()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.to_string()),
                _ => Ok(()),
            }
        } else {
            let addr: SocketAddr = tokio::net::lookup_host(&args.emit)
                .await
                .map_err(|e| format!("{}: {e}", args.emit))?
                .next()
                .ok_or_else(|| format!("{}: no address", args.emit))?;
            let clock = SystemClock;
            let origin = clock.now();
            for r in &mut records {
                r.ts += origin;
            }
            let n = stream_to(addr, &records, &clock).await.map_err(|e| format!("{addr}: {e}"))?;
            eprintln!("sent {n} samples to {addr}");
            Ok(())
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
