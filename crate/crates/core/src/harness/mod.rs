//! Runs a whole deployment in one process on a virtual clock: sensors feed
//! the gateway, the gateway syncs to the health server and raises alarms
//! at the emergency centre, all over simulated links.

mod clock;
mod demos;
mod link;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use clock::VirtualClock;
pub use demos::{demo_names, demo_scenario, DEMOS};
pub use link::{LinkStats, SimLink, Transmission};

use crate::emergency::{EmergencyCentre, Intake};
use crate::gateway::{
    DispatchCause, Effect, Gateway, PositionSource, Reminder, ReminderKind, ScriptedPosition,
    ScriptedWeather, SystemMode,
};
use crate::protocol::{BulkAck, BulkFrame, Timestamp, VitalChannel, VitalRecord};
use crate::sensors::{generate_sample, LinkSpec, Scenario, ScenarioAction};
use crate::server::{AssignmentSeed, HealthServer, Role, ServerConfig, UserSeed};

/// A component refused something the scenario asked for.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("t={ts} {component}: {message}")]
pub struct HarnessError {
    pub ts: Timestamp,
    pub component: &'static str,
    pub message: String,
}

#[derive(Debug, Clone)]
enum Event {
    Emit { sensor: usize },
    SampleArrives(VitalRecord),
    Tick,
    Action(ScenarioAction),
    FrameArrives(BulkFrame),
    FrameLost { frame_id: u64 },
    AckArrives(BulkAck),
    SmsToGateway(String),
    AlarmArrives { to: String, line: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum LinkId {
    Sensor,
    Uplink,
    Ack,
    Downlink,
    Alarm,
}

impl LinkId {
    fn name(self) -> &'static str {
        match self {
            LinkId::Sensor => "sensor",
            LinkId::Uplink => "uplink",
            LinkId::Ack => "ack",
            LinkId::Downlink => "downlink",
            LinkId::Alarm => "alarm",
        }
    }
}

#[derive(Serialize)]
#[serde(tag = "src", rename_all = "snake_case")]
enum LogLine<'a> {
    Gateway {
        ts: Timestamp,
        #[serde(flatten)]
        effect: &'a Effect,
    },
    Action {
        ts: Timestamp,
        #[serde(flatten)]
        action: &'a ScenarioAction,
    },
    Link {
        ts: Timestamp,
        link: &'static str,
        index: u64,
        copies: u8,
        deliver_at: Timestamp,
    },
    Server {
        ts: Timestamp,
        frame_id: u64,
        accepted: u64,
        inserted_records: usize,
        inserted_events: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        rejected: Option<&'a str>,
    },
    Emergency {
        ts: Timestamp,
        to: &'a str,
        outcome: &'a str,
        #[serde(skip_serializing_if = "Option::is_none")]
        dispatch_id: Option<u64>,
    },
    Family {
        ts: Timestamp,
        to: &'a str,
        line: &'a str,
    },
    Error {
        ts: Timestamp,
        component: &'static str,
        message: &'a str,
    },
}

/// One dispatched alarm and, once the emergency centre has it, its latency
/// from the triggering sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<VitalChannel>,
    pub sensor_id: String,
    pub cause: DispatchCause,
    pub trigger_ts: Timestamp,
    pub alarm_ts: Timestamp,
    pub dispatch_ts: Option<Timestamp>,
    pub latency_s: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub horizon_s: Timestamp,
    /// Time of the last processed event.
    pub end_ts: Timestamp,
    pub episodes: Vec<Episode>,
    pub alarms_cancelled: usize,
    pub dispatches: usize,
    pub links: BTreeMap<String, LinkStats>,
    pub samples_generated: u64,
    pub gateway_records: usize,
    pub records_synced: usize,
    /// Records the server inserted over the whole run; equal to
    /// `records_synced` when no duplicate was ever stored.
    pub server_inserted: usize,
    pub pending_at_end: usize,
    pub key_sets_equal: bool,
    pub reminders_fired: usize,
    pub reminders: Vec<Reminder>,
    pub errors: usize,
    pub effect_log_lines: usize,
    pub digest: String,
}

impl RunReport {
    pub fn reminders_of(&self, kind: ReminderKind) -> impl Iterator<Item = &Reminder> {
        self.reminders.iter().filter(move |r| r.kind == kind)
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} (horizon {} s, ended at {} s)", self.scenario, self.horizon_s, self.end_ts);
        let _ = writeln!(
            s,
            "alarms: {} dispatched by the gateway, {} cancelled, {} dispatches at the emergency centre",
            self.episodes.len(),
            self.alarms_cancelled,
            self.dispatches
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
            "sync: {} samples generated, {} stored on the gateway, {} on the server, {} pending, key sets {}",
            self.samples_generated,
            self.gateway_records,
            self.records_synced,
            self.pending_at_end,
            if self.key_sets_equal { "equal" } else { "differ" }
        );
        let medicine = self.reminders_of(ReminderKind::Medicine).count();
        let climate = self.reminders_of(ReminderKind::Climate).count();
        let _ = writeln!(s, "reminders: {medicine} medicine, {climate} climate");
        for (name, l) in &self.links {
            let _ = writeln!(
                s,
                "link {name}: sent {} delivered {} dropped {} duplicated {}",
                l.sent, l.delivered, l.dropped, l.duplicated
            );
        }
        let _ = writeln!(s, "errors logged: {}", self.errors);
        let _ = writeln!(s, "effect log: {} lines, sha256 {}", self.effect_log_lines, self.digest);
        s
    }
}

/// Every component of one scenario wired over simulated links.
pub struct Harness {
    scenario: Scenario,
    clock: VirtualClock<Event>,
    gateway: Gateway,
    server: HealthServer,
    emergency: EmergencyCentre,
    links: BTreeMap<LinkId, SimLink>,
    ticks: BTreeSet<Timestamp>,
    fail_next_bulk: bool,
    episodes: Vec<Episode>,
    alarms_cancelled: usize,
    reminders: Vec<Reminder>,
    samples_generated: u64,
    server_inserted: usize,
    errors: usize,
    log: Vec<String>,
    hasher: Sha256,
}

impl std::fmt::Debug for Harness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Harness")
            .field("scenario", &self.scenario.name)
            .field("now", &self.clock.now())
            .field("queued", &self.clock.len())
            .finish_non_exhaustive()
    }
}

/// Accounts for a scenario: the elder and every doctor it names, each with
/// token `token-<id>`, doctors assigned to the elder.
pub fn server_config(scenario: &Scenario) -> ServerConfig {
    let elder = &scenario.gateway.elder_id;
    let mut doctors = BTreeSet::from([scenario.doctor.clone()]);
    for e in &scenario.events {
        if let ScenarioAction::Threshold { doctor, .. } | ScenarioAction::Advice { doctor, .. } = &e.action {
            doctors.insert(doctor.clone());
        }
    }
    let mut users = vec![UserSeed {
        id: elder.clone(),
        role: Role::Elderly,
        name: String::new(),
        token: format!("token-{elder}"),
    }];
    users.extend(doctors.iter().map(|d| UserSeed {
        id: d.clone(),
        role: Role::Doctor,
        name: String::new(),
        token: format!("token-{d}"),
    }));
    ServerConfig {
        users,
        assignments: doctors
            .iter()
            .map(|d| AssignmentSeed {
                doctor: d.clone(),
                subject: elder.clone(),
            })
            .collect(),
        grants: Vec::new(),
    }
}

impl Harness {
    pub fn new(scenario: Scenario) -> Result<Self, HarnessError> {
        let setup = |component, e: &dyn std::fmt::Display| HarnessError {
            ts: 0,
            component,
            message: e.to_string(),
        };
        let home = scenario
            .gateway
            .home_location()
            .map_err(|e| setup("gateway", &e))?;
        let position = PositionSource::new(Box::new(ScriptedPosition::new(scenario.track.clone())), home);
        let weather = Box::new(ScriptedWeather::new(scenario.weather.clone()));
        let gateway = Gateway::with_providers(scenario.gateway.clone(), 0, position, weather)
            .map_err(|e| setup("gateway", &e))?;
        let server = HealthServer::new(&server_config(&scenario)).map_err(|e| setup("server", &e))?;

        let l = &scenario.links;
        let links = BTreeMap::from([
            (LinkId::Sensor, SimLink::new(&l.sensor)),
            (LinkId::Uplink, SimLink::new(&l.uplink)),
            (LinkId::Ack, SimLink::new(&LinkSpec::with_latency(l.uplink.latency_s))),
            (LinkId::Downlink, SimLink::new(&l.downlink)),
            (LinkId::Alarm, SimLink::new(&l.alarm)),
        ]);

        let mut clock = VirtualClock::new(0);
        for sensor in 0..scenario.sensors.len() {
            clock.schedule(0, Event::Emit { sensor });
        }
        for e in &scenario.events {
            clock.schedule(e.at, Event::Action(e.action.clone()));
        }
        let mut harness = Harness {
            scenario,
            clock,
            gateway,
            server,
            emergency: EmergencyCentre::new(),
            links,
            ticks: BTreeSet::new(),
            fail_next_bulk: false,
            episodes: Vec::new(),
            alarms_cancelled: 0,
            reminders: Vec::new(),
            samples_generated: 0,
            server_inserted: 0,
            errors: 0,
            log: Vec::new(),
            hasher: Sha256::new(),
        };
        harness.arm_tick(false);
        Ok(harness)
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn server(&self) -> &HealthServer {
        &self.server
    }

    pub fn emergency(&self) -> &EmergencyCentre {
        &self.emergency
    }

    pub fn effect_log(&self) -> &[String] {
        &self.log
    }

    pub fn is_quiescent(&self) -> bool {
        self.clock.is_empty()
    }

    /// Processes every event due by `until`, including ones scheduled along
    /// the way, then moves the clock to `until`. Returns the number of
    /// events processed. An `until` in the past processes nothing.
    pub fn step(&mut self, until: Timestamp) -> Result<usize, HarnessError> {
        if until < self.clock.now() {
            return Ok(0);
        }
        let mut processed = 0;
        while let Some((ts, event)) = self.clock.pop_until(until) {
            self.handle(ts, event)?;
            processed += 1;
        }
        self.clock.advance_to(until);
        Ok(processed)
    }

    /// Runs to the horizon and then lets in-flight messages land.
    pub fn run(&mut self) -> Result<RunReport, HarnessError> {
        self.step(self.scenario.horizon_s)?;
        while let Some(at) = self.clock.next_at() {
            self.step(at)?;
        }
        Ok(self.report())
    }

    pub fn report(&self) -> RunReport {
        let elder = self.gateway.elder_id();
        let gateway_keys: BTreeSet<(String, u64)> = self
            .gateway
            .store()
            .records()
            .iter()
            .map(|r| (r.sensor_id.clone(), r.seq))
            .collect();
        RunReport {
            scenario: self.scenario.name.clone(),
            horizon_s: self.scenario.horizon_s,
            end_ts: self.clock.now(),
            episodes: self.episodes.clone(),
            alarms_cancelled: self.alarms_cancelled,
            dispatches: self.emergency.dispatch_count(),
            links: self
                .links
                .iter()
                .map(|(id, l)| (id.name().to_string(), l.stats()))
                .collect(),
            samples_generated: self.samples_generated,
            gateway_records: gateway_keys.len(),
            records_synced: self.server.record_count(elder),
            server_inserted: self.server_inserted,
            pending_at_end: self.gateway.store().pending_len(),
            key_sets_equal: gateway_keys == self.server.record_keys(elder),
            reminders_fired: self.reminders.len(),
            reminders: self.reminders.clone(),
            errors: self.errors,
            effect_log_lines: self.log.len(),
            digest: hex::encode(self.hasher.clone().finalize()),
        }
    }

    fn emit(&mut self, line: &LogLine<'_>) {
        let text = serde_json::to_string(line).expect("log lines serialize");
        self.hasher.update(text.as_bytes());
        self.hasher.update(b"\n");
        self.log.push(text);
    }

    fn log_error(&mut self, ts: Timestamp, component: &'static str, message: &str) {
        self.errors += 1;
        self.emit(&LogLine::Error {
            ts,
            component,
            message,
        });
    }

    fn send(&mut self, link: LinkId, now: Timestamp, force_drop: bool, event: Event) -> Transmission {
        let tx = self
            .links
            .get_mut(&link)
            .expect("every link exists")
            .send(now, force_drop);
        self.emit(&LogLine::Link {
            ts: now,
            link: link.name(),
            index: tx.index,
            copies: tx.copies,
            deliver_at: tx.deliver_at,
        });
        for _ in 1..tx.copies {
            self.clock.schedule(tx.deliver_at, event.clone());
        }
        if tx.copies > 0 {
            self.clock.schedule(tx.deliver_at, event);
        }
        tx
    }

    fn delivered(&mut self, link: LinkId) {
        self.links.get_mut(&link).expect("every link exists").delivered();
    }

    /// Makes sure a tick is queued for the gateway's next wake-up inside
    /// the horizon. After a tick at `now` the next one is at least a second
    /// later.
    fn arm_tick(&mut self, just_ticked: bool) {
        let now = self.clock.now();
        let floor = if just_ticked { now + 1 } else { now };
        let at = self.gateway.next_wakeup().max(floor);
        if at <= self.scenario.horizon_s && self.ticks.insert(at) {
            self.clock.schedule(at, Event::Tick);
        }
    }

    fn handle(&mut self, now: Timestamp, event: Event) -> Result<(), HarnessError> {
        match event {
            Event::Emit { sensor } => {
                let spec = &self.scenario.sensors[sensor];
                let sample = generate_sample(spec, &self.scenario.gateway.elder_id, now, spec.seq_at(now));
                let next = now + spec.period_s;
                if next <= self.scenario.horizon_s && spec.until_s.is_none_or(|u| next <= u) {
                    self.clock.schedule(next, Event::Emit { sensor });
                }
                if let Some(rec) = sample {
                    self.samples_generated += 1;
                    self.send(LinkId::Sensor, now, false, Event::SampleArrives(rec));
                }
            }
            Event::SampleArrives(rec) => {
                self.delivered(LinkId::Sensor);
                match self.gateway.ingest_sample(rec, now) {
                    Ok(effects) => self.apply_effects(now, effects),
                    Err(e) => self.log_error(now, "gateway", &e.to_string()),
                }
            }
            Event::Tick => {
                self.ticks.remove(&now);
                if now >= self.gateway.next_wakeup() {
                    let effects = self.gateway.tick(now);
                    self.apply_effects(now, effects);
                }
                self.arm_tick(true);
                return Ok(());
            }
            Event::Action(action) => {
                self.emit(&LogLine::Action { ts: now, action: &action });
                self.act(now, action)?;
            }
            Event::FrameArrives(frame) => {
                self.delivered(LinkId::Uplink);
                let outcome = self.server.ingest_bulk(&frame, now);
                self.server_inserted += outcome.inserted_records.len();
                self.emit(&LogLine::Server {
                    ts: now,
                    frame_id: frame.frame_id,
                    accepted: outcome.ack.accepted,
                    inserted_records: outcome.inserted_records.len(),
                    inserted_events: outcome.inserted_events.len(),
                    rejected: outcome.rejected.as_deref(),
                });
                self.send(LinkId::Ack, now, false, Event::AckArrives(outcome.ack));
            }
            Event::FrameLost { frame_id } => {
                let effects = self.gateway.on_bulk_failure(frame_id, now);
                self.apply_effects(now, effects);
            }
            Event::AckArrives(ack) => {
                self.delivered(LinkId::Ack);
                let effects = self.gateway.on_bulk_ack(ack, now);
                self.apply_effects(now, effects);
            }
            Event::SmsToGateway(line) => {
                self.delivered(LinkId::Downlink);
                match self.gateway.handle_sms_line(&line, now) {
                    Ok(effects) => self.apply_effects(now, effects),
                    Err(e) => self.log_error(now, "gateway", &e.to_string()),
                }
            }
            Event::AlarmArrives { to, line } => {
                self.delivered(LinkId::Alarm);
                self.alarm_arrives(now, &to, &line);
            }
        }
        self.arm_tick(false);
        Ok(())
    }

    fn act(&mut self, now: Timestamp, action: ScenarioAction) -> Result<(), HarnessError> {
        let elder = self.scenario.gateway.elder_id.clone();
        let server_err = |e: crate::server::ServerError| HarnessError {
            ts: now,
            component: "server",
            message: e.to_string(),
        };
        let effects = match action {
            ScenarioAction::Cancel { .. } | ScenarioAction::Confirm { .. } => {
                let (channel, response) = action.prompt_response().expect("prompt action");
                self.gateway.respond_to_alarm_prompt(channel, response, now)
            }
            ScenarioAction::QuickAlarm => self.gateway.quick_alarm(now),
            ScenarioAction::Threshold {
                channel,
                low,
                high,
                doctor,
            } => {
                self.server
                    .set_threshold(&doctor, &elder, channel, low, high, now)
                    .map_err(server_err)?;
                self.push_outbox(now);
                Vec::new()
            }
            ScenarioAction::Advice { text, doctor } => {
                self.server
                    .send_advice(&doctor, &elder, &text, now)
                    .map_err(server_err)?;
                self.push_outbox(now);
                Vec::new()
            }
            ScenarioAction::FailBulk => {
                self.fail_next_bulk = true;
                Vec::new()
            }
            ScenarioAction::Pause | ScenarioAction::Resume => {
                let mode = if action == ScenarioAction::Pause {
                    SystemMode::Paused
                } else {
                    SystemMode::Monitoring
                };
                self.gateway.set_mode(mode, now).map_err(|e| HarnessError {
                    ts: now,
                    component: "gateway",
                    message: e.to_string(),
                })?
            }
        };
        self.apply_effects(now, effects);
        Ok(())
    }

    fn push_outbox(&mut self, now: Timestamp) {
        for sms in self.server.drain_outbox() {
            self.send(LinkId::Downlink, now, false, Event::SmsToGateway(sms.line));
        }
    }

    fn apply_effects(&mut self, now: Timestamp, effects: Vec<Effect>) {
        for effect in effects {
            self.emit(&LogLine::Gateway { ts: now, effect: &effect });
            match effect {
                Effect::SmsOut { to, line } => {
                    self.send(LinkId::Alarm, now, false, Event::AlarmArrives { to, line });
                }
                Effect::BulkUpload { frame_id, frame, .. } => {
                    let force = std::mem::take(&mut self.fail_next_bulk);
                    let tx = self.send(LinkId::Uplink, now, force, Event::FrameArrives(frame));
                    if tx.copies == 0 {
                        // The sender gives up when the ack would have been due.
                        self.clock.schedule(tx.deliver_at, Event::FrameLost { frame_id });
                    }
                }
                Effect::AlarmDispatched {
                    channel,
                    sensor_id,
                    alarm_ts,
                    trigger_ts,
                    cause,
                    ..
                } => self.episodes.push(Episode {
                    channel,
                    sensor_id,
                    cause,
                    trigger_ts,
                    alarm_ts,
                    dispatch_ts: None,
                    latency_s: None,
                }),
                Effect::AlarmCancelled { .. } => self.alarms_cancelled += 1,
                Effect::Reminder(r) => self.reminders.push(r),
                _ => {}
            }
        }
    }

    fn alarm_arrives(&mut self, now: Timestamp, to: &str, line: &str) {
        if self.scenario.emergency_target() != Some(to) {
            self.emit(&LogLine::Family { ts: now, to, line });
            return;
        }
        match self.emergency.receive_alarm(line, now) {
            Ok(Intake::Dispatched(record)) => {
                if let Some(ep) = self.episodes.iter_mut().find(|e| {
                    e.dispatch_ts.is_none() && e.sensor_id == record.sensor_id && e.alarm_ts == record.alarm_ts
                }) {
                    ep.dispatch_ts = Some(now);
                    ep.latency_s = Some(now - ep.trigger_ts);
                }
                self.emit(&LogLine::Emergency {
                    ts: now,
                    to,
                    outcome: "dispatched",
                    dispatch_id: Some(record.dispatch_id),
                });
            }
            Ok(Intake::Duplicate) => self.emit(&LogLine::Emergency {
                ts: now,
                to,
                outcome: "duplicate",
                dispatch_id: None,
            }),
            Err(e) => self.log_error(now, "emergency", &e.to_string()),
        }
    }
}

/// Builds the harness for `scenario` and runs it to completion.
pub fn run_scenario(scenario: &Scenario) -> Result<RunReport, HarnessError> {
    Harness::new(scenario.clone())?.run()
}

#[cfg(test)]
mod tests;
