use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use icare_client::Client;
use icare_core::protocol::VitalChannel;
use icare_core::server::ServerConfig;
use icare_service::{ServiceConfig, SystemClock};
use serde_json::Value;

const ICARE: &str = env!("CARGO_BIN_EXE_icare");
const GATEWAY: &str = env!("CARGO_BIN_EXE_gateway");
const SENSORS: &str = env!("CARGO_BIN_EXE_sensors");

fn output(bin: &str, args: &[&str], stdin: &str) -> (bool, String, String) {
    let mut child = Command::new(bin)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    (
        out.status.success(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn demo_list_and_run_with_report() {
    let (ok, out, _) = output(ICARE, &["demo", "--list"], "");
    assert!(ok);
    assert!(out.lines().any(|l| l == "two-exceedance"));

    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let (ok, out, err) = output(
        ICARE,
        &["demo", "two-exceedance", "--report", report.to_str().unwrap()],
        "",
    );
    assert!(ok, "{err}");
    assert!(out.contains("latency 32 s"), "{out}");
    let json: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["episodes"][0]["latency_s"], 32);
    assert_eq!(json["key_sets_equal"], true);

    let (ok, _, err) = output(ICARE, &["demo", "no-such-demo"], "");
    assert!(!ok);
    assert!(err.contains("no demo named"), "{err}");
}

#[test]
fn run_reads_a_scenario_file() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/scenarios/cancel.toml");
    let (ok, out, err) = output(ICARE, &["run", "--scenario", path], "");
    assert!(ok, "{err}");
    assert!(out.contains("0 dispatched by the gateway, 1 cancelled"), "{out}");
}

#[test]
fn sensors_piped_into_a_simulated_gateway() {
    let (ok, samples, _) = output(SENSORS, &["--scenario", "two-exceedance"], "");
    assert!(ok);
    assert_eq!(samples.lines().count(), 60);
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/config/gateway.toml");
    let (ok, out, err) = output(GATEWAY, &["--config", config, "--mode", "sim", "--until", "600"], &samples);
    assert!(ok, "{err}");
    let events: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let alarms: Vec<_> = events
        .iter()
        .filter(|e| e["effect"] == "sms_out")
        .map(|e| (e["at"].as_i64().unwrap(), e["to"].as_str().unwrap()))
        .collect();
    assert_eq!(alarms, vec![(50, "EC"), (50, "F01")]);
    let acked: u64 = events
        .iter()
        .filter(|e| e["effect"] == "bulk_acked")
        .map(|e| e["accepted"].as_u64().unwrap())
        .sum();
    assert!(acked >= 60);
}

#[test]
fn gateway_sim_reports_bad_input() {
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/config/gateway.toml");
    let (ok, _, err) = output(GATEWAY, &["--config", config, "--mode", "sim"], "{\"x\": 1}\n");
    assert!(!ok);
    assert!(err.contains("input line 1"), "{err}");
}

struct Killed(Child);

impl Drop for Killed {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> SocketAddr {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap()
}

fn wait_for<T>(deadline: Duration, mut probe: impl FnMut() -> Option<T>) -> T {
    let end = Instant::now() + deadline;
    loop {
        if let Some(v) = probe() {
            return v;
        }
        assert!(Instant::now() < end, "timed out");
        std::thread::sleep(Duration::from_millis(50));
    }
}

/// Sensors, gateway and service as separate processes on unix time.
#[test]
fn live_processes_end_to_end() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let users = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/config/users.toml")).unwrap();
    let service = rt
        .block_on(icare_service::start(
            ServiceConfig::ephemeral(ServerConfig::from_toml(&users).unwrap()),
            Arc::new(SystemClock),
        ))
        .unwrap();
    let addrs = service.addrs;

    let dir = tempfile::tempdir().unwrap();
    let gateway_cfg = dir.path().join("gateway.toml");
    std::fs::write(
        &gateway_cfg,
        r#"
elder_id = "E01"
enabled_channels = ["ECG_HR"]
alarm_wait_s = 2
bulk_interval_s = 2
alarm_targets = ["EC", "F01"]
home = [38.88, 121.52]
thresholds = { ECG_HR = [50, 100] }
"#,
    )
    .unwrap();
    let scenario = dir.path().join("scenario.toml");
    std::fs::write(
        &scenario,
        r#"
name = "fast"
horizon_s = 8

[gateway]
elder_id = "E01"
enabled_channels = ["ECG_HR"]
alarm_targets = ["EC"]

[[sensor]]
id = "S-ECG-1"
channel = "ECG_HR"
period_s = 1
until_s = 5
generator = { script = [[0, 80], [1, 120], [2, 130], [3, 85]] }
"#,
    )
    .unwrap();

    let sensor_addr = free_port();
    let mut gateway = Killed(
        Command::new(GATEWAY)
            .args(["--config", gateway_cfg.to_str().unwrap(), "--mode", "live"])
            .args(["--sensors", &sensor_addr.to_string()])
            .args(["--bulk", &addrs.bulk.to_string()])
            .args(["--intake", &addrs.sms_intake.to_string()])
            .args(["--bus", &addrs.sms_bus.to_string()])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let (lines_tx, lines_rx) = mpsc::channel::<Value>();
    let stdout = gateway.0.stdout.take().unwrap();
    std::thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            let Ok(line) = line else { return };
            let _ = lines_tx.send(serde_json::from_str(&line).unwrap());
        }
    });
    wait_for(Duration::from_secs(10), || TcpStream::connect(sensor_addr).ok());

    let (ok, _, err) = output(
        SENSORS,
        &["--scenario", scenario.to_str().unwrap(), "--emit", &sensor_addr.to_string()],
        "",
    );
    assert!(ok, "{err}");

    let doctor = Client::new(service.http_url(), Some("token-D01".into()));
    let dispatch = wait_for(Duration::from_secs(10), || {
        let d = rt.block_on(doctor.dispatches(Some("E01"))).unwrap();
        d.into_iter().next()
    });
    assert_eq!(dispatch.sensor_id, "S-ECG-1");
    // Both sides on unix time: the alarm is stamped within seconds of receipt.
    assert!((dispatch.received_at - dispatch.alarm_ts).abs() <= 2, "{dispatch:?}");
    assert!(dispatch.alarm_ts > 1_600_000_000);

    wait_for(Duration::from_secs(10), || {
        let v = rt.block_on(doctor.vitals("E01", None)).unwrap();
        (v.records.len() == 6).then_some(())
    });

    // A doctor's retune travels over the SMS bus to the running gateway.
    rt.block_on(doctor.set_threshold("E01", VitalChannel::EcgHr, 40.0, 140.0))
        .unwrap();
    let updated = wait_for(Duration::from_secs(10), || {
        lines_rx
            .try_iter()
            .find(|e| e["effect"] == "threshold_updated")
    });
    assert_eq!(updated["high"], 140.0);
    assert_eq!(updated["set_by"], "D01");

    // User commands on stdin.
    writeln!(gateway.0.stdin.as_mut().unwrap(), "quick").unwrap();
    wait_for(Duration::from_secs(10), || {
        let d = rt.block_on(doctor.dispatches(Some("E01"))).unwrap();
        (d.len() == 2).then_some(())
    });

    drop(gateway);
    rt.block_on(service.shutdown());
}
