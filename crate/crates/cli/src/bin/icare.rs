use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use icare_cli::live::{run_live, LiveOptions};
use icare_cli::{init_tracing, scenario_from};
use icare_client::Client;
use icare_core::harness::{demo_names, run_scenario};
use icare_core::protocol::{Timestamp, VitalChannel};
use icare_core::server::{ConfidenceLevel, Rating, ServerConfig, Verdict};
use icare_service::{ServiceConfig, SystemClock};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "icare", version, about = "Elderly telemonitoring: scenarios, the service, and an API client")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start the health server and emergency centre.
    Serve(ServeArgs),
    /// Run a scenario file in virtual time, or live with --live.
    Run {
        #[arg(long)]
        scenario: String,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run a shipped scenario; without a name, list them.
    Demo {
        name: Option<String>,
        #[arg(long)]
        list: bool,
        #[command(flatten)]
        opts: RunOpts,
    },
    #[command(flatten)]
    Api(ApiCommand),
}

#[derive(Args)]
struct ServeArgs {
    /// Accounts, assignments and grants (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    http: SocketAddr,
    #[arg(long, default_value = "127.0.0.1:7401")]
    bulk: SocketAddr,
    #[arg(long, default_value = "127.0.0.1:7402")]
    intake: SocketAddr,
    #[arg(long, default_value = "127.0.0.1:7403")]
    bus: SocketAddr,
    /// Append-only journal, replayed at startup.
    #[arg(long)]
    journal: Option<PathBuf>,
    /// Emergency-centre audit log (JSON lines).
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Args)]
struct RunOpts {
    /// Write the full report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Real sockets and a wall clock instead of the simulator.
    #[arg(long)]
    live: bool,
    /// Scenario seconds per wall second in live mode.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// HTTP address of the in-process service in live mode.
    #[arg(long, default_value = "127.0.0.1:8080")]
    http: SocketAddr,
}

#[derive(Args)]
struct Conn {
    #[arg(long, env = "ICARE_URL", default_value = "http://127.0.0.1:8080", global = true)]
    url: String,
    #[arg(long, env = "ICARE_TOKEN", global = true, hide_env_values = true)]
    token: Option<String>,
}

#[derive(Subcommand)]
enum ApiCommand {
    /// Show the caller and the subjects they may view.
    Me(Conn),
    Vitals {
        subject: String,
        #[arg(long)]
        since: Option<Timestamp>,
        #[command(flatten)]
        conn: Conn,
    },
    Alarms {
        subject: String,
        #[command(flatten)]
        conn: Conn,
    },
    History {
        subject: String,
        #[command(flatten)]
        conn: Conn,
    },
    Thresholds {
        subject: String,
        #[command(flatten)]
        conn: Conn,
    },
    SetThreshold {
        subject: String,
        channel: VitalChannel,
        #[arg(allow_negative_numbers = true)]
        low: f64,
        #[arg(allow_negative_numbers = true)]
        high: f64,
        #[command(flatten)]
        conn: Conn,
    },
    Advice {
        subject: String,
        #[arg(required = true, num_args = 1..)]
        text: Vec<String>,
        #[command(flatten)]
        conn: Conn,
    },
    Grants {
        subject: String,
        #[command(flatten)]
        conn: Conn,
    },
    Grant {
        subject: String,
        grantee: String,
        #[command(flatten)]
        conn: Conn,
    },
    Revoke {
        subject: String,
        grantee: String,
        #[command(flatten)]
        conn: Conn,
    },
    /// Ranked knowledge search.
    Search {
        keyword: String,
        #[arg(long)]
        area: Option<String>,
        #[arg(long)]
        min_level: Option<ConfidenceLevel>,
        #[command(flatten)]
        conn: Conn,
    },
    AddKnowledge {
        #[arg(long = "keyword", required = true)]
        keywords: Vec<String>,
        #[arg(long, default_value = "")]
        area: String,
        #[arg(long)]
        body: String,
        #[command(flatten)]
        conn: Conn,
    },
    Knowledge {
        id: u64,
        #[command(flatten)]
        conn: Conn,
    },
    /// Rate an entry 0, 0.5 or 1.
    Evaluate {
        id: u64,
        rating: f64,
        #[command(flatten)]
        conn: Conn,
    },
    /// helpful or unhelpful.
    Feedback {
        id: u64,
        verdict: String,
        #[command(flatten)]
        conn: Conn,
    },
    Threads(Conn),
    NewThread {
        #[arg(required = true, num_args = 1..)]
        participants: Vec<String>,
        #[command(flatten)]
        conn: Conn,
    },
    Thread {
        id: u64,
        #[command(flatten)]
        conn: Conn,
    },
    Post {
        id: u64,
        #[arg(required = true, num_args = 1..)]
        text: Vec<String>,
        #[command(flatten)]
        conn: Conn,
    },
    Dispatches {
        #[arg(long)]
        elder: Option<String>,
        #[command(flatten)]
        conn: Conn,
    },
    /// Print a subject's live feed until interrupted.
    Watch {
        subject: String,
        #[command(flatten)]
        conn: Conn,
    },
}

// Ignores write errors so a closed pipe ends quietly.
fn print_json<T: Serialize>(v: &T) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer_pretty(&mut out, v);
    let _ = out.write_all(b"\n");
}

fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<(), String> {
    let text = serde_json::to_string_pretty(report).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))
}

async fn run(source: &str, opts: RunOpts) -> Result<(), String> {
    let scenario = scenario_from(source)?;
    if opts.live {
        let live = LiveOptions {
            speed: opts.speed,
            http: opts.http,
            ..LiveOptions::default()
        };
        let ready: icare_cli::live::OnReady = Box::new(|url: &str| {
            eprintln!("service at {url} (tokens are token-<user id>)");
        });
        let report = run_live(&scenario, live, Some(ready)).await.map_err(|e| e.to_string())?;
        print!("{}", report.summary());
        if let Some(p) = &opts.report {
            write_report(p, &report)?;
        }
    } else {
        let report = run_scenario(&scenario).map_err(|e| e.to_string())?;
        print!("{}", report.summary());
        if let Some(p) = &opts.report {
            write_report(p, &report)?;
        }
    }
    Ok(())
}

async fn serve(args: ServeArgs) -> Result<(), String> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| format!("{}: {e}", args.config.display()))?;
    let server = ServerConfig::from_toml(&text).map_err(|e| format!("{}: {e}", args.config.display()))?;
    let cfg = ServiceConfig {
        http: args.http,
        bulk: args.bulk,
        sms_intake: args.intake,
        sms_bus: args.bus,
        server,
        journal: args.journal,
        audit_log: args.audit,
    };
    let service = icare_service::start(cfg, Arc::new(SystemClock))
        .await
        .map_err(|e| e.to_string())?;
    service.wait_for_ctrl_c().await;
    Ok(())
}

fn client(conn: &Conn) -> Client {
    Client::new(conn.url.clone(), conn.token.clone())
}

async fn api(cmd: ApiCommand) -> Result<(), icare_client::ClientError> {
    use ApiCommand::*;
    match cmd {
        Me(c) => print_json(&client(&c).me().await?),
        Vitals { subject, since, conn } => print_json(&client(&conn).vitals(&subject, since).await?),
        Alarms { subject, conn } => print_json(&client(&conn).alarms(&subject).await?),
        History { subject, conn } => print_json(&client(&conn).history(&subject).await?),
        Thresholds { subject, conn } => print_json(&client(&conn).thresholds(&subject).await?),
        SetThreshold {
            subject,
            channel,
            low,
            high,
            conn,
        } => print_json(&client(&conn).set_threshold(&subject, channel, low, high).await?),
        Advice { subject, text, conn } => print_json(&client(&conn).send_advice(&subject, &text.join(" ")).await?),
        Grants { subject, conn } => print_json(&client(&conn).grants(&subject).await?),
        Grant { subject, grantee, conn } => print_json(&client(&conn).grant(&subject, &grantee).await?),
        Revoke { subject, grantee, conn } => {
            client(&conn).revoke(&subject, &grantee).await?;
            println!("revoked");
        }
        Search {
            keyword,
            area,
            min_level,
            conn,
        } => print_json(
            &client(&conn)
                .query_knowledge(&keyword, area.as_deref(), min_level)
                .await?,
        ),
        AddKnowledge {
            keywords,
            area,
            body,
            conn,
        } => {
            let kw: Vec<&str> = keywords.iter().map(String::as_str).collect();
            print_json(&client(&conn).add_knowledge(&kw, &area, &body).await?)
        }
        Knowledge { id, conn } => print_json(&client(&conn).knowledge_entry(id).await?),
        Evaluate { id, rating, conn } => {
            let rating = Rating::try_from(rating).map_err(icare_client::ClientError::Protocol)?;
            print_json(&client(&conn).evaluate(id, rating).await?)
        }
        Feedback { id, verdict, conn } => {
            let verdict: Verdict = serde_json::from_value(serde_json::Value::String(verdict))
                .map_err(|_| icare_client::ClientError::Protocol("verdict is helpful or unhelpful".into()))?;
            print_json(&client(&conn).feedback(id, verdict).await?)
        }
        Threads(c) => print_json(&client(&c).threads().await?),
        NewThread { participants, conn } => {
            let p: Vec<&str> = participants.iter().map(String::as_str).collect();
            print_json(&client(&conn).create_thread(&p).await?)
        }
        Thread { id, conn } => print_json(&client(&conn).thread(id).await?),
        Post { id, text, conn } => print_json(&client(&conn).post_message(id, &text.join(" ")).await?),
        Dispatches { elder, conn } => print_json(&client(&conn).dispatches(elder.as_deref()).await?),
        Watch { subject, conn } => {
            let mut feed = client(&conn).live(&subject).await?;
            while let Some(event) = feed.next().await {
                let line = serde_json::to_string(&event?).expect("serializable");
                if writeln!(std::io::stdout(), "{line}").is_err() {
                    break;
                }
            }
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    if matches!(cli.command, Command::Serve(_)) || matches!(&cli.command, Command::Run { opts, .. } | Command::Demo { opts, .. } if opts.live) {
        init_tracing();
    }
    let result = match cli.command {
        Command::Serve(args) => serve(args).await,
        Command::Run { scenario, opts } => run(&scenario, opts).await,
        Command::Demo { name, list, opts } => match name {
            Some(n) if !list => {
                if demo_names().any(|d| d == n) {
                    run(&n, opts).await
                } else {
                    Err(format!("no demo named {n:?}; try `icare demo --list`"))
                }
            }
            _ => {
                for n in demo_names() {
                    println!("{n}");
                }
                Ok(())
            }
        },
        Command::Api(cmd) => api(cmd).await.map_err(|e| e.to_string()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
