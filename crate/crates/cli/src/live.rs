//! Runs a scenario on real sockets and a scaled wall clock: the service in
//! process, the gateway as a [`GatewayNode`], sensors and scripted events
//! paced by the clock. Link latencies and drop schedules do not apply; the
//! transports are whatever the sockets do.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use icare_client::Client;
use icare_core::emergency::{DispatchFilter, DispatchRecord};
use icare_core::gateway::{
    DispatchCause, Effect, Gateway, PositionSource, Reminder, ScriptedPosition, ScriptedWeather, SystemMode,
};
use icare_core::harness::server_config;
use icare_core::protocol::{Timestamp, VitalChannel};
use icare_core::sensors::{sample_stream, Scenario, ScenarioAction};
use icare_service::{sleep_until, ScenarioClock, ServiceConfig};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::node::{GatewayNode, NodeEvent, NodeInput, NodeLinks};

#[derive(Debug, Clone)]
pub struct LiveOptions {
    /// Scenario seconds per wall second.
    pub speed: f64,
    pub http: SocketAddr,
    /// Wall time to wait after the horizon for in-flight traffic.
    pub grace: Duration,
}

impl Default for LiveOptions {
    fn default() -> Self {
        LiveOptions {
            speed: 1.0,
            http: "127.0.0.1:0".parse().expect("literal addr"),
            grace: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveEpisode {
    pub channel: Option<VitalChannel>,
    pub sensor_id: String,
    pub cause: DispatchCause,
    pub trigger_ts: Timestamp,
    pub alarm_ts: Timestamp,
    pub dispatch_ts: Option<Timestamp>,
    pub latency_s: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveReport {
    pub scenario: String,
    pub speed: f64,
    pub horizon_s: Timestamp,
    pub wall_s: f64,
    pub episodes: Vec<LiveEpisode>,
    pub alarms_cancelled: usize,
    pub dispatches: Vec<DispatchRecord>,
    pub samples_sent: usize,
    pub gateway_records: usize,
    pub server_records: usize,
    pub pending_at_end: usize,
    pub key_sets_equal: bool,
    pub reminders: Vec<Reminder>,
    pub warnings: Vec<String>,
    pub effects: usize,
}

impl LiveReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "live scenario {} (horizon {} s at {}x, {:.1} s wall)",
            self.scenario, self.horizon_s, self.speed, self.wall_s
        );
        let _ = writeln!(
            s,
            "alarms: {} dispatched by the gateway, {} cancelled, {} dispatches at the emergency centre",
            self.episodes.len(),
            self.alarms_cancelled,
            self.dispatches.len()
        );
        for e in &self.episodes {
            let channel = e.channel.map_or("quick".to_string(), |c| c.to_string());
            let latency = e.latency_s.map_or("not received".to_string(), |l| format!("latency {l} s"));
            let _ = writeln!(
                s,
                "  {channel} {} triggered {} alarm {} ({:?}): {latency}",
                e.sensor_id, e.trigger_ts, e.alarm_ts, e.cause
            );
        }
        let _ = writeln!(
            s,
            "sync: {} samples sent, {} stored on the gateway, {} on the server, {} pending, key sets {}",
            self.samples_sent,
            self.gateway_records,
            self.server_records,
            self.pending_at_end,
            if self.key_sets_equal { "equal" } else { "differ" }
        );
        let _ = writeln!(s, "reminders: {}", self.reminders.len());
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LiveError {
    #[error("service: {0}")]
    Service(#[from] icare_service::ServiceError),
    #[error("gateway: {0}")]
    Gateway(String),
    #[error("client: {0}")]
    Client(#[from] icare_client::ClientError),
}

enum Item {
    Sample(icare_core::protocol::VitalRecord),
    Action(ScenarioAction),
}

/// Called once the service is up, with its HTTP base URL.
pub type OnReady = Box<dyn FnOnce(&str) + Send>;

pub async fn run_live(scenario: &Scenario, opts: LiveOptions, on_ready: Option<OnReady>) -> Result<LiveReport, LiveError> {
    let started = Instant::now();
    let clock = Arc::new(ScenarioClock::new(opts.speed));
    let mut cfg = ServiceConfig::ephemeral(server_config(scenario));
    cfg.http = opts.http;
    let service = icare_service::start(cfg, clock.clone()).await?;
    let base = service.http_url();
    if let Some(f) = on_ready {
        f(&base);
    }

    let home = scenario
        .gateway
        .home_location()
        .map_err(|e| LiveError::Gateway(e.to_string()))?;
    let position = PositionSource::new(Box::new(ScriptedPosition::new(scenario.track.clone())), home);
    let weather = Box::new(ScriptedWeather::new(scenario.weather.clone()));
    let gateway = Gateway::with_providers(scenario.gateway.clone(), 0, position, weather)
        .map_err(|e| LiveError::Gateway(e.to_string()))?;

    let links = NodeLinks {
        bulk: service.addrs.bulk,
        sms_bus: service.addrs.sms_bus,
        sms_intake: service.addrs.sms_intake,
    };
    let (events_tx, mut events_rx) = mpsc::unbounded_channel::<NodeEvent>();
    let (input_tx, input_rx) = mpsc::channel(256);
    let target = scenario.emergency_target().unwrap_or_default().to_string();
    let node = GatewayNode::new(gateway, clock.clone(), links, target, events_tx).tick_until(scenario.horizon_s);
    let node_task = tokio::spawn(node.run(input_rx));

    // Samples before actions at the same second, as in the simulator.
    let elder = scenario.gateway.elder_id.clone();
    let mut timeline: Vec<(Timestamp, u8, Item)> = sample_stream(&scenario.sensors, &elder, scenario.horizon_s)
        .into_iter()
        .map(|r| (r.ts, 0, Item::Sample(r)))
        .collect();
    timeline.extend(scenario.events.iter().map(|e| (e.at, 1, Item::Action(e.action.clone()))));
    timeline.sort_by_key(|(t, order, _)| (*t, *order));

    let client = Client::new(base.clone(), None);
    let mut samples_sent = 0;
    let mut warnings = Vec::new();
    for (t, _, item) in timeline {
        sleep_until(clock.as_ref(), t).await;
        let input = match item {
            Item::Sample(r) => {
                samples_sent += 1;
                NodeInput::Sample(r)
            }
            Item::Action(a) => match a {
                ScenarioAction::Cancel { .. } | ScenarioAction::Confirm { .. } => {
                    let (c, r) = a.prompt_response().expect("prompt action");
                    NodeInput::Prompt(c, r)
                }
                ScenarioAction::QuickAlarm => NodeInput::Quick,
                ScenarioAction::FailBulk => NodeInput::FailNextBulk,
                ScenarioAction::Pause => NodeInput::Mode(SystemMode::Paused),
                ScenarioAction::Resume => NodeInput::Mode(SystemMode::Monitoring),
                ScenarioAction::Threshold {
                    channel,
                    low,
                    high,
                    doctor,
                } => {
                    let doc = client.as_user(format!("token-{doctor}"));
                    if let Err(e) = doc.set_threshold(&elder, channel, low, high).await {
                        warnings.push(format!("threshold at {t}: {e}"));
                    }
                    continue;
                }
                ScenarioAction::Advice { text, doctor } => {
                    let doc = client.as_user(format!("token-{doctor}"));
                    if let Err(e) = doc.send_advice(&elder, &text).await {
                        warnings.push(format!("advice at {t}: {e}"));
                    }
                    continue;
                }
            },
        };
        if input_tx.send(input).await.is_err() {
            break;
        }
    }
    sleep_until(clock.as_ref(), scenario.horizon_s).await;
    tokio::time::sleep(opts.grace).await;
    drop(input_tx);
    let gateway = node_task
        .await
        .map_err(|e| LiveError::Gateway(e.to_string()))??;

    let mut effects = Vec::new();
    while let Ok(e) = events_rx.try_recv() {
        effects.push(e);
    }
    let dispatches = service.state.emergency().list_dispatches(&DispatchFilter::default());
    let server_keys = service.state.server().record_keys(&elder);
    service.shutdown().await;

    let gateway_keys: BTreeSet<(String, u64)> = gateway
        .store()
        .records()
        .iter()
        .map(|r| (r.sensor_id.clone(), r.seq))
        .collect();
    let mut report = LiveReport {
        scenario: scenario.name.clone(),
        speed: opts.speed,
        horizon_s: scenario.horizon_s,
        wall_s: started.elapsed().as_secs_f64(),
        episodes: Vec::new(),
        alarms_cancelled: 0,
        dispatches: dispatches.into_iter().rev().collect(),
        samples_sent,
        gateway_records: gateway_keys.len(),
        server_records: server_keys.len(),
        pending_at_end: gateway.store().pending_len(),
        key_sets_equal: gateway_keys == server_keys,
        reminders: Vec::new(),
        warnings,
        effects: effects.len(),
    };
    for NodeEvent { effect, .. } in effects {
        match effect {
            Effect::AlarmDispatched {
                channel,
                sensor_id,
                alarm_ts,
                trigger_ts,
                cause,
                ..
            } => {
                let dispatch_ts = report
                    .dispatches
                    .iter()
                    .find(|d| d.sensor_id == sensor_id && d.alarm_ts == alarm_ts)
                    .map(|d| d.received_at);
                report.episodes.push(LiveEpisode {
                    channel,
                    sensor_id,
                    cause,
                    trigger_ts,
                    alarm_ts,
                    dispatch_ts,
                    latency_s: dispatch_ts.map(|d| d - trigger_ts),
                });
            }
            Effect::AlarmCancelled { .. } => report.alarms_cancelled += 1,
            Effect::Reminder(r) => report.reminders.push(r),
            Effect::Warning { ts, message } => report.warnings.push(format!("gateway at {ts}: {message}")),
            _ => {}
        }
    }
    Ok(report)
}
