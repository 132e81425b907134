//! The elder's phone: local monitoring, alarm escalation, bulk sync and the
//! living-assistant functions.
//!
//! [`Gateway`] is a deterministic state machine. Every input (sample, short
//! message, user response, tick, upload outcome) is a method call stamped
//! with the current time and returns the [`Effect`]s it produced. Sending
//! messages and frames is left to whoever drives it: the scenario harness in
//! virtual time or the live runtime over sockets.

mod location;
mod monitor;
mod reminders;
mod store;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{
    classify_inbound, decode_sms, encode_sms, BulkAck, BulkFrame, DecodeError, EventRecord,
    GatewayEventKind, Inbound, InboundCategory, Location, OutboundOnly, SmsMessage, Threshold,
    Timestamp, VitalChannel, VitalRecord, QUICK_SENSOR_ID,
};

pub use location::{FixedPosition, PositionProvider, PositionSource, ScriptedPosition};
pub use monitor::{ChannelMonitor, MonitorState, Transition};
pub use reminders::{
    climate_advice, ClimateRule, ClimateTier, NoWeather, Reminder, ReminderKind,
    ReminderSchedule, ScheduleError, ScriptedWeather, Weather, WeatherProvider, CLIMATE_RULES,
    CLIMATE_PERIODS_D, DAY_S, HOUR_S, MEDICINE_PERIODS_H,
};
pub use store::{AdviceEntry, AlarmEntry, AlarmOutcome, LocalStore};

use store::PendingKey;

pub const DEFAULT_ALARM_WAIT_S: i64 = 30;
pub const DEFAULT_BULK_INTERVAL_S: i64 = 300;

/// Ack bookkeeping is kept for this many unanswered frames.
const MAX_IN_FLIGHT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemMode {
    #[default]
    Monitoring,
    Paused,
}

fn default_alarm_wait() -> i64 {
    DEFAULT_ALARM_WAIT_S
}

fn default_bulk_interval() -> i64 {
    DEFAULT_BULK_INTERVAL_S
}

/// Phone configuration. Deserializes from a flat key/value document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub elder_id: String,
    pub enabled_channels: BTreeSet<VitalChannel>,
    #[serde(default = "default_alarm_wait")]
    pub alarm_wait_s: i64,
    #[serde(default = "default_bulk_interval")]
    pub bulk_interval_s: i64,
    /// Emergency centre first, then family and friends.
    #[serde(default)]
    pub alarm_targets: Vec<String>,
    #[serde(default)]
    pub system_mode: SystemMode,
    /// Bands in force at start-up, `[low, high]` per channel.
    #[serde(default)]
    pub thresholds: BTreeMap<VitalChannel, [f64; 2]>,
    /// Position used until the first fix, `[lat, lon]`.
    #[serde(default)]
    pub home: Option<[f64; 2]>,
    #[serde(default)]
    pub medicine_period_h: Option<u32>,
    #[serde(default)]
    pub climate_period_d: Option<u32>,
    /// Reminder anchor; defaults to the gateway start time.
    #[serde(default)]
    pub reminder_anchor: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("alarm_wait_s must be at least 1, got {0}")]
    AlarmWait(i64),
    #[error("bulk_interval_s must be at least 1, got {0}")]
    BulkInterval(i64),
    #[error("alarm_targets must not be empty in monitoring mode")]
    NoTargets,
    #[error("invalid elder_id: {0}")]
    ElderId(String),
    #[error("threshold for {channel}: {reason}")]
    Threshold {
        channel: VitalChannel,
        reason: String,
    },
    #[error("home position: {0}")]
    Home(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("parse error: {0}")]
    Parse(String),
}

impl GatewayConfig {
    pub fn new(elder_id: impl Into<String>, channels: impl IntoIterator<Item = VitalChannel>) -> Self {
        GatewayConfig {
            elder_id: elder_id.into(),
            enabled_channels: channels.into_iter().collect(),
            alarm_wait_s: DEFAULT_ALARM_WAIT_S,
            bulk_interval_s: DEFAULT_BULK_INTERVAL_S,
            alarm_targets: Vec::new(),
            system_mode: SystemMode::Monitoring,
            thresholds: BTreeMap::new(),
            home: None,
            medicine_period_h: None,
            climate_period_d: None,
            reminder_anchor: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: GatewayConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        crate::protocol::validate_id("elder_id", &self.elder_id)
            .map_err(|e| ConfigError::ElderId(e.to_string()))?;
        if self.alarm_wait_s < 1 {
            return Err(ConfigError::AlarmWait(self.alarm_wait_s));
        }
        if self.bulk_interval_s < 1 {
            return Err(ConfigError::BulkInterval(self.bulk_interval_s));
        }
        if self.system_mode == SystemMode::Monitoring && self.alarm_targets.is_empty() {
            return Err(ConfigError::NoTargets);
        }
        for (channel, [low, high]) in &self.thresholds {
            Threshold::new(*channel, *low, *high, "config", 0).map_err(|e| {
                ConfigError::Threshold {
                    channel: *channel,
                    reason: e.to_string(),
                }
            })?;
        }
        self.home_location()?;
        ReminderSchedule::new(self.medicine_period_h, self.climate_period_d, 0)?;
        Ok(())
    }

    pub fn home_location(&self) -> Result<Location, ConfigError> {
        let [lat, lon] = self.home.unwrap_or([0.0, 0.0]);
        Location::new(lat, lon).map_err(|e| ConfigError::Home(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptResponse {
    Cancel,
    Confirm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchCause {
    Timeout,
    Confirmed,
    Quick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalQuery {
    Alarms,
    Advice,
    LatestVitals,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalRecords {
    Alarms(Vec<AlarmEntry>),
    Advice(Vec<AdviceEntry>),
    LatestVitals(Vec<VitalRecord>),
}

impl LocalRecords {
    pub fn len(&self) -> usize {
        match self {
            LocalRecords::Alarms(v) => v.len(),
            LocalRecords::Advice(v) => v.len(),
            LocalRecords::LatestVitals(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Observable output of the gateway, one JSON object per line in the effect
/// log.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    Stored {
        sensor_id: String,
        channel: VitalChannel,
        seq: u64,
        ts: Timestamp,
        value: f64,
        monitored: bool,
    },
    FlagMarked {
        channel: VitalChannel,
        ts: Timestamp,
        value: f64,
    },
    FlagCleared {
        channel: VitalChannel,
        ts: Timestamp,
    },
    /// The elder is asked whether to cancel.
    AlarmPrompt {
        channel: VitalChannel,
        sensor_id: String,
        trigger_ts: Timestamp,
        deadline: Timestamp,
    },
    AlarmCancelled {
        channel: VitalChannel,
        ts: Timestamp,
    },
    AlarmDispatched {
        channel: Option<VitalChannel>,
        sensor_id: String,
        alarm_ts: Timestamp,
        trigger_ts: Timestamp,
        cause: DispatchCause,
        location: Location,
    },
    Rearmed {
        channel: VitalChannel,
        ts: Timestamp,
    },
    SmsOut {
        to: String,
        line: String,
    },
    ThresholdUpdated {
        channel: VitalChannel,
        low: f64,
        high: f64,
        set_by: String,
        ts: Timestamp,
    },
    AdviceReceived {
        doctor_id: String,
        text: String,
        ts: Timestamp,
    },
    BulkUpload {
        frame_id: u64,
        records: usize,
        events: usize,
        #[serde(skip)]
        frame: BulkFrame,
    },
    BulkAcked {
        frame_id: u64,
        accepted: u64,
        drained: usize,
        pending: usize,
    },
    BulkFailed {
        frame_id: u64,
        pending: usize,
    },
    Reminder(Reminder),
    ModeChanged {
        mode: SystemMode,
        ts: Timestamp,
    },
    Warning {
        ts: Timestamp,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("record for elder {got} delivered to gateway of {expected}")]
    WrongElder { expected: String, got: String },
    #[error("sensor {sensor_id}: seq {got} not after {last} (duplicate or out of order)")]
    OutOfOrder {
        sensor_id: String,
        last: u64,
        got: u64,
    },
    #[error("sensor {sensor_id} seq {seq}: value is not finite")]
    NonFinite { sensor_id: String, seq: u64 },
    #[error(transparent)]
    Protocol(#[from] OutboundOnly),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

pub struct Gateway {
    config: GatewayConfig,
    monitors: BTreeMap<VitalChannel, ChannelMonitor>,
    inert: BTreeMap<VitalChannel, Threshold>,
    last_seq: BTreeMap<String, u64>,
    store: LocalStore,
    in_flight: BTreeMap<u64, Vec<PendingKey>>,
    next_frame_id: u64,
    next_event_seq: u64,
    last_flush: Timestamp,
    reminders: ReminderSchedule,
    position: PositionSource,
    weather: Box<dyn WeatherProvider>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("elder_id", &self.config.elder_id)
            .field("monitors", &self.monitors)
            .field("pending", &self.store.pending_len())
            .finish_non_exhaustive()
    }
}

impl Gateway {
    /// A gateway with a fixed position at `home` and no weather source.
    pub fn new(config: GatewayConfig, start: Timestamp) -> Result<Self, ConfigError> {
        let home = config.home_location()?;
        Gateway::with_providers(config, start, PositionSource::fixed(home), Box::new(NoWeather))
    }

    pub fn with_providers(
        config: GatewayConfig,
        start: Timestamp,
        position: PositionSource,
        weather: Box<dyn WeatherProvider>,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let reminders = ReminderSchedule::new(
            config.medicine_period_h,
            config.climate_period_d,
            config.reminder_anchor.unwrap_or(start),
        )?;
        let mut monitors = BTreeMap::new();
        let mut inert = BTreeMap::new();
        for (channel, [low, high]) in &config.thresholds {
            let t = Threshold::new(*channel, *low, *high, "config", start)
                .expect("validated above");
            if config.enabled_channels.contains(channel) {
                monitors.insert(*channel, ChannelMonitor::new(t));
            } else {
                inert.insert(*channel, t);
            }
        }
        Ok(Gateway {
            config,
            monitors,
            inert,
            last_seq: BTreeMap::new(),
            store: LocalStore::default(),
            in_flight: BTreeMap::new(),
            next_frame_id: 1,
            next_event_seq: 0,
            last_flush: start,
            reminders,
            position,
            weather,
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn elder_id(&self) -> &str {
        &self.config.elder_id
    }

    pub fn store(&self) -> &LocalStore {
        &self.store
    }

    pub fn monitor(&self, channel: VitalChannel) -> Option<&ChannelMonitor> {
        self.monitors.get(&channel)
    }

    pub fn monitor_state(&self, channel: VitalChannel) -> Option<&MonitorState> {
        self.monitors.get(&channel).map(|m| &m.state)
    }

    /// Active threshold, or the stored-but-inert one for a disabled channel.
    pub fn threshold(&self, channel: VitalChannel) -> Option<&Threshold> {
        self.monitors
            .get(&channel)
            .map(|m| &m.threshold)
            .or_else(|| self.inert.get(&channel))
    }

    fn monitoring(&self) -> bool {
        self.config.system_mode == SystemMode::Monitoring
    }

    fn log_event(&mut self, kind: GatewayEventKind, ts: Timestamp, detail: String) {
        let seq = self.next_event_seq;
        self.next_event_seq += 1;
        self.store.append_event(EventRecord {
            elder_id: self.config.elder_id.clone(),
            seq,
            kind,
            ts,
            detail,
        });
    }

    /// Stores one sample and runs it through the channel monitor.
    pub fn ingest_sample(&mut self, rec: VitalRecord, now: Timestamp) -> Result<Vec<Effect>, GatewayError> {
        if rec.elder_id != self.config.elder_id {
            return Err(GatewayError::WrongElder {
                expected: self.config.elder_id.clone(),
                got: rec.elder_id,
            });
        }
        if !rec.value.is_finite() {
            return Err(GatewayError::NonFinite {
                sensor_id: rec.sensor_id,
                seq: rec.seq,
            });
        }
        if let Some(&last) = self.last_seq.get(&rec.sensor_id) {
            if rec.seq <= last {
                return Err(GatewayError::OutOfOrder {
                    sensor_id: rec.sensor_id,
                    last,
                    got: rec.seq,
                });
            }
        }
        self.last_seq.insert(rec.sensor_id.clone(), rec.seq);

        let monitored = self.monitoring()
            && self.config.enabled_channels.contains(&rec.channel)
            && self.monitors.contains_key(&rec.channel);
        let mut effects = vec![Effect::Stored {
            sensor_id: rec.sensor_id.clone(),
            channel: rec.channel,
            seq: rec.seq,
            ts: rec.ts,
            value: rec.value,
            monitored,
        }];
        self.store.append(rec.clone());
        if !monitored {
            return Ok(effects);
        }

        let wait = self.config.alarm_wait_s;
        let monitor = self.monitors.get_mut(&rec.channel).expect("checked above");
        match monitor.observe(rec.value, rec.ts, &rec.sensor_id, now, wait) {
            Transition::None => {}
            Transition::FlagMarked => effects.push(Effect::FlagMarked {
                channel: rec.channel,
                ts: rec.ts,
                value: rec.value,
            }),
            Transition::FlagCleared => effects.push(Effect::FlagCleared {
                channel: rec.channel,
                ts: rec.ts,
            }),
            Transition::Rearmed => effects.push(Effect::Rearmed {
                channel: rec.channel,
                ts: rec.ts,
            }),
            Transition::AlarmArmed { deadline } => {
                effects.push(Effect::AlarmPrompt {
                    channel: rec.channel,
                    sensor_id: rec.sensor_id.clone(),
                    trigger_ts: rec.ts,
                    deadline,
                });
                self.log_event(
                    GatewayEventKind::AlarmRaised,
                    now,
                    format!("{} {} value {} deadline {}", rec.channel, rec.sensor_id, rec.value, deadline),
                );
            }
        }
        Ok(effects)
    }

    fn alarm_lines(&self, ts: Timestamp, sensor_id: &str, location: Location) -> Vec<Effect> {
        let line = encode_sms(&SmsMessage::Alarm {
            ts,
            elder_id: self.config.elder_id.clone(),
            sensor_id: sensor_id.to_string(),
            location,
        })
        .expect("elder and sensor ids are validated on entry");
        self.config
            .alarm_targets
            .iter()
            .map(|to| Effect::SmsOut {
                to: to.clone(),
                line: line.clone(),
            })
            .collect()
    }

    fn dispatch(&mut self, channel: VitalChannel, now: Timestamp, cause: DispatchCause) -> Vec<Effect> {
        let monitor = self.monitors.get_mut(&channel).expect("dispatch on monitored channel");
        let MonitorState::AlarmPending {
            trigger_ts,
            sensor_id,
            ..
        } = std::mem::replace(&mut monitor.state, MonitorState::Dispatched)
        else {
            unreachable!("dispatch only from AlarmPending");
        };
        let location = self.position.current(now);
        let mut effects = vec![Effect::AlarmDispatched {
            channel: Some(channel),
            sensor_id: sensor_id.clone(),
            alarm_ts: now,
            trigger_ts,
            cause,
            location,
        }];
        effects.extend(self.alarm_lines(now, &sensor_id, location));
        self.store.push_alarm(AlarmEntry {
            ts: now,
            channel: Some(channel),
            sensor_id: sensor_id.clone(),
            trigger_ts,
            outcome: if cause == DispatchCause::Confirmed {
                AlarmOutcome::Confirmed
            } else {
                AlarmOutcome::Dispatched
            },
            location: Some(location),
        });
        self.log_event(
            GatewayEventKind::AlarmDispatched,
            now,
            format!("{channel} {sensor_id} at {}", location.to_wire()),
        );
        effects
    }

    /// Advances time: dispatches expired alarm prompts, flushes the bulk
    /// log when the interval has elapsed, fires due reminders.
    pub fn tick(&mut self, now: Timestamp) -> Vec<Effect> {
        let mut effects = Vec::new();
        if self.monitoring() {
            let expired: Vec<VitalChannel> = self
                .monitors
                .values()
                .filter(|m| m.pending_deadline().is_some_and(|d| d <= now))
                .map(|m| m.channel)
                .collect();
            for channel in expired {
                effects.extend(self.dispatch(channel, now, DispatchCause::Timeout));
            }
        }
        if now >= self.last_flush + self.config.bulk_interval_s {
            if self.store.pending_len() > 0 {
                effects.push(self.upload_effect(now));
            } else {
                self.last_flush = now;
            }
        }
        let due = self.reminders.due_reminders(now, self.weather.as_mut());
        if self.monitoring() {
            effects.extend(due.into_iter().map(Effect::Reminder));
        }
        effects
    }

    /// Earliest time at which [`Gateway::tick`] has something to do.
    pub fn next_wakeup(&self) -> Timestamp {
        let flush = self.last_flush + self.config.bulk_interval_s;
        self.monitors
            .values()
            .filter_map(ChannelMonitor::pending_deadline)
            .chain(self.reminders.next_due())
            .fold(flush, Timestamp::min)
    }

    pub fn respond_to_alarm_prompt(
        &mut self,
        channel: VitalChannel,
        response: PromptResponse,
        now: Timestamp,
    ) -> Vec<Effect> {
        let deadline = match self.monitors.get(&channel).map(|m| &m.state) {
            Some(MonitorState::AlarmPending { deadline, .. }) => *deadline,
            _ => {
                return vec![Effect::Warning {
                    ts: now,
                    message: format!("{response:?} for {channel} ignored: no pending alarm"),
                }]
            }
        };
        if now >= deadline {
            return vec![Effect::Warning {
                ts: now,
                message: format!("{response:?} for {channel} ignored: waiting time ended at {deadline}"),
            }];
        }
        match response {
            PromptResponse::Cancel => {
                let monitor = self.monitors.get_mut(&channel).expect("matched above");
                let MonitorState::AlarmPending {
                    trigger_ts,
                    sensor_id,
                    ..
                } = std::mem::replace(&mut monitor.state, MonitorState::Normal)
                else {
                    unreachable!()
                };
                self.store.push_alarm(AlarmEntry {
                    ts: now,
                    channel: Some(channel),
                    sensor_id: sensor_id.clone(),
                    trigger_ts,
                    outcome: AlarmOutcome::Cancelled,
                    location: None,
                });
                self.log_event(
                    GatewayEventKind::AlarmCancelled,
                    now,
                    format!("{channel} {sensor_id}"),
                );
                vec![Effect::AlarmCancelled { channel, ts: now }]
            }
            PromptResponse::Confirm => self.dispatch(channel, now, DispatchCause::Confirmed),
        }
    }

    /// Immediate alarm to every target, bypassing the monitor.
    pub fn quick_alarm(&mut self, now: Timestamp) -> Vec<Effect> {
        if !self.monitoring() {
            return vec![Effect::Warning {
                ts: now,
                message: "quick alarm ignored: system paused".into(),
            }];
        }
        let location = self.position.current(now);
        let mut effects = vec![Effect::AlarmDispatched {
            channel: None,
            sensor_id: QUICK_SENSOR_ID.into(),
            alarm_ts: now,
            trigger_ts: now,
            cause: DispatchCause::Quick,
            location,
        }];
        effects.extend(self.alarm_lines(now, QUICK_SENSOR_ID, location));
        self.store.push_alarm(AlarmEntry {
            ts: now,
            channel: None,
            sensor_id: QUICK_SENSOR_ID.into(),
            trigger_ts: now,
            outcome: AlarmOutcome::Quick,
            location: Some(location),
        });
        self.log_event(
            GatewayEventKind::QuickAlarm,
            now,
            format!("quick alarm at {}", location.to_wire()),
        );
        effects
    }

    /// Applies a threshold update or stores doctor advice.
    pub fn handle_inbound(&mut self, msg: SmsMessage, now: Timestamp) -> Result<Vec<Effect>, GatewayError> {
        let category = classify_inbound(&Inbound::Sms(msg.clone()))?;
        if msg.elder_id() != self.config.elder_id {
            return Ok(vec![Effect::Warning {
                ts: now,
                message: format!(
                    "{} for elder {} ignored",
                    msg.kind().tag(),
                    msg.elder_id()
                ),
            }]);
        }
        let effects = match (category, msg) {
            (
                InboundCategory::Threshold,
                SmsMessage::Threshold {
                    ts,
                    channel,
                    low,
                    high,
                    doctor_id,
                    ..
                },
            ) => {
                let t = Threshold::new(channel, low, high, doctor_id.clone(), ts)
                    .expect("decoded THRESH lines satisfy low <= high");
                self.log_event(
                    GatewayEventKind::ThresholdReceived,
                    now,
                    format!("{channel} [{low}, {high}] by {doctor_id}"),
                );
                let updated = Effect::ThresholdUpdated {
                    channel,
                    low,
                    high,
                    set_by: doctor_id,
                    ts: now,
                };
                if self.config.enabled_channels.contains(&channel) {
                    self.monitors.insert(channel, ChannelMonitor::new(t));
                    vec![updated]
                } else {
                    self.inert.insert(channel, t);
                    vec![
                        updated,
                        Effect::Warning {
                            ts: now,
                            message: format!("threshold for disabled channel {channel} stored but inert"),
                        },
                    ]
                }
            }
            (InboundCategory::Advice, SmsMessage::Advice { ts, doctor_id, text, .. }) => {
                self.store.push_advice(AdviceEntry {
                    ts,
                    received_at: now,
                    doctor_id: doctor_id.clone(),
                    text: text.clone(),
                });
                self.log_event(GatewayEventKind::AdviceReceived, now, format!("{doctor_id}: {text}"));
                vec![Effect::AdviceReceived {
                    doctor_id,
                    text,
                    ts: now,
                }]
            }
            _ => unreachable!("classification matches message kind"),
        };
        Ok(effects)
    }

    pub fn handle_sms_line(&mut self, line: &str, now: Timestamp) -> Result<Vec<Effect>, GatewayError> {
        let msg = decode_sms(line)?;
        self.handle_inbound(msg, now)
    }

    fn upload_effect(&mut self, now: Timestamp) -> Effect {
        let frame = self.flush_bulk(now);
        Effect::BulkUpload {
            frame_id: frame.frame_id,
            records: frame.records.len(),
            events: frame.events.len(),
            frame,
        }
    }

    /// Packs everything pending into a frame. Nothing drains until the
    /// matching ack arrives.
    pub fn flush_bulk(&mut self, now: Timestamp) -> BulkFrame {
        self.last_flush = now;
        let (records, events) = self.store.pending_snapshot();
        let frame_id = self.next_frame_id;
        self.next_frame_id += 1;
        let frame = BulkFrame::new(frame_id, records, events);
        if !frame.is_empty() {
            self.in_flight.insert(frame_id, self.store.pending_keys());
            while self.in_flight.len() > MAX_IN_FLIGHT {
                self.in_flight.pop_first();
            }
        }
        frame
    }

    /// Drains the first `ack.accepted` entries of the acknowledged frame.
    pub fn on_bulk_ack(&mut self, ack: BulkAck, now: Timestamp) -> Vec<Effect> {
        let Some(keys) = self.in_flight.remove(&ack.frame_id) else {
            return vec![Effect::Warning {
                ts: now,
                message: format!("ack for unknown frame {}", ack.frame_id),
            }];
        };
        let n = (ack.accepted as usize).min(keys.len());
        let drained = self.store.drain(&keys[..n]);
        vec![Effect::BulkAcked {
            frame_id: ack.frame_id,
            accepted: ack.accepted,
            drained,
            pending: self.store.pending_len(),
        }]
    }

    /// The frame did not make it; everything stays pending for the next
    /// interval.
    pub fn on_bulk_failure(&mut self, frame_id: u64, _now: Timestamp) -> Vec<Effect> {
        self.in_flight.remove(&frame_id);
        vec![Effect::BulkFailed {
            frame_id,
            pending: self.store.pending_len(),
        }]
    }

    pub fn due_reminders(&mut self, now: Timestamp) -> Vec<Reminder> {
        let due = self.reminders.due_reminders(now, self.weather.as_mut());
        if self.monitoring() {
            due
        } else {
            Vec::new()
        }
    }

    pub fn set_mode(&mut self, mode: SystemMode, now: Timestamp) -> Result<Vec<Effect>, ConfigError> {
        if mode == SystemMode::Monitoring && self.config.alarm_targets.is_empty() {
            return Err(ConfigError::NoTargets);
        }
        if mode == SystemMode::Paused {
            self.monitors.values_mut().for_each(ChannelMonitor::reset);
        }
        self.config.system_mode = mode;
        Ok(vec![Effect::ModeChanged { mode, ts: now }])
    }

    pub fn query_local(&self, kind: LocalQuery) -> LocalRecords {
        match kind {
            LocalQuery::Alarms => LocalRecords::Alarms(self.store.alarms_newest_first()),
            LocalQuery::Advice => LocalRecords::Advice(self.store.advice_newest_first()),
            LocalQuery::LatestVitals => LocalRecords::LatestVitals(self.store.latest_vitals()),
        }
    }
}
