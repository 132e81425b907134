//! The gateway alone in virtual time, driven by JSON lines: samples,
//! scheduled scenario events and inbound SMS lines. Time advances to each
//! input's timestamp, running every tick due on the way. Bulk uploads are
//! acknowledged in full at once, as if the server were next door.

use std::io::BufRead;

use icare_core::gateway::{Effect, Gateway, SystemMode};
use icare_core::protocol::{BulkAck, SmsMessage, Timestamp, VitalRecord};
use icare_core::sensors::{ScenarioAction, ScheduledEvent};
use serde::Deserialize;

use crate::node::NodeEvent;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum SimInput {
    Sample(VitalRecord),
    Sms { at: Timestamp, sms: String },
    Event(ScheduledEvent),
}

impl SimInput {
    pub fn at(&self) -> Timestamp {
        match self {
            SimInput::Sample(r) => r.ts,
            SimInput::Sms { at, .. } => *at,
            SimInput::Event(e) => e.at,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("input line {line}: {message}")]
pub struct SimError {
    pub line: usize,
    pub message: String,
}

pub struct GatewaySim<F: FnMut(NodeEvent)> {
    gateway: Gateway,
    now: Timestamp,
    fail_next_bulk: bool,
    out: F,
}

impl<F: FnMut(NodeEvent)> GatewaySim<F> {
    pub fn new(gateway: Gateway, out: F) -> Self {
        GatewaySim {
            gateway,
            now: 0,
            fail_next_bulk: false,
            out,
        }
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    /// Runs every tick due up to and including `t`.
    pub fn advance_to(&mut self, t: Timestamp) {
        loop {
            let wake = self.gateway.next_wakeup().max(self.now);
            if wake > t {
                break;
            }
            self.now = wake;
            let effects = self.gateway.tick(wake);
            self.emit(effects);
            if self.gateway.next_wakeup() <= wake {
                break;
            }
        }
        self.now = self.now.max(t);
    }

    pub fn apply(&mut self, input: SimInput) -> Result<(), String> {
        let t = input.at();
        if t < self.now {
            return Err(format!("input at {t} is before the current time {}", self.now));
        }
        self.advance_to(t);
        let now = self.now;
        let effects = match input {
            SimInput::Sample(r) => self.gateway.ingest_sample(r, now).map_err(|e| e.to_string())?,
            SimInput::Sms { sms, .. } => self.gateway.handle_sms_line(&sms, now).map_err(|e| e.to_string())?,
            SimInput::Event(e) => self.act(e.action, now)?,
        };
        self.emit(effects);
        Ok(())
    }

    fn act(&mut self, action: ScenarioAction, now: Timestamp) -> Result<Vec<Effect>, String> {
        let elder_id = self.gateway.elder_id().to_string();
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
                let msg = SmsMessage::Threshold {
                    ts: now,
                    elder_id,
                    channel,
                    low,
                    high,
                    doctor_id: doctor,
                };
                self.gateway.handle_inbound(msg, now).map_err(|e| e.to_string())?
            }
            ScenarioAction::Advice { text, doctor } => {
                let msg = SmsMessage::Advice {
                    ts: now,
                    elder_id,
                    doctor_id: doctor,
                    text,
                };
                self.gateway.handle_inbound(msg, now).map_err(|e| e.to_string())?
            }
            ScenarioAction::FailBulk => {
                self.fail_next_bulk = true;
                Vec::new()
            }
            ScenarioAction::Pause => self.gateway.set_mode(SystemMode::Paused, now).map_err(|e| e.to_string())?,
            ScenarioAction::Resume => self
                .gateway
                .set_mode(SystemMode::Monitoring, now)
                .map_err(|e| e.to_string())?,
        };
        Ok(effects)
    }

    fn emit(&mut self, effects: Vec<Effect>) {
        let mut queue = std::collections::VecDeque::from(effects);
        while let Some(effect) = queue.pop_front() {
            if let Effect::BulkUpload { frame_id, frame, .. } = &effect {
                let follow = if std::mem::take(&mut self.fail_next_bulk) {
                    self.gateway.on_bulk_failure(*frame_id, self.now)
                } else {
                    let ack = BulkAck {
                        frame_id: *frame_id,
                        accepted: frame.len() as u64,
                    };
                    self.gateway.on_bulk_ack(ack, self.now)
                };
                queue.extend(follow);
            }
            (self.out)(NodeEvent { ts: self.now, effect });
        }
    }
}

/// Feeds every line of `input` to the simulator; blank lines and `#`
/// comments are skipped. Ticks continue to `until` after the last input.
pub fn run_sim<F: FnMut(NodeEvent)>(
    gateway: Gateway,
    input: impl BufRead,
    until: Option<Timestamp>,
    out: F,
) -> Result<Gateway, SimError> {
    let mut sim = GatewaySim::new(gateway, out);
    for (idx, line) in input.lines().enumerate() {
        let err = |message: String| SimError { line: idx + 1, message };
        let line = line.map_err(|e| err(e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parsed: SimInput = serde_json::from_str(trimmed)
            .map_err(|e| err(format!("not a sample, event or sms line: {e}")))?;
        sim.apply(parsed).map_err(err)?;
    }
    if let Some(u) = until {
        sim.advance_to(u);
    }
    Ok(sim.gateway)
}

#[cfg(test)]
mod tests {
    use super::*;
    use icare_core::gateway::GatewayConfig;
    use icare_core::protocol::VitalChannel;

    fn gateway() -> Gateway {
        let mut cfg = GatewayConfig::new("E01", [VitalChannel::EcgHr]);
        cfg.alarm_targets = vec!["EC".into(), "F1".into()];
        cfg.alarm_wait_s = 30;
        cfg.bulk_interval_s = 60;
        cfg.thresholds.insert(VitalChannel::EcgHr, [50.0, 100.0]);
        Gateway::new(cfg, 0).unwrap()
    }

    fn sample(ts: Timestamp, value: f64) -> String {
        format!(
            r#"{{"elder_id":"E01","sensor_id":"S-ECG-1","channel":"ECG_HR","seq":{},"ts":{ts},"value":{value}}}"#,
            ts / 10
        )
    }

    fn run(lines: &[String], until: Option<Timestamp>) -> (Gateway, Vec<NodeEvent>) {
        let mut out = Vec::new();
        let text = lines.join("\n");
        let gw = run_sim(gateway(), text.as_bytes(), until, |e| out.push(e)).unwrap();
        (gw, out)
    }

    fn alarms(events: &[NodeEvent]) -> Vec<(Timestamp, String)> {
        events
            .iter()
            .filter_map(|e| match &e.effect {
                Effect::SmsOut { to, .. } => Some((e.ts, to.clone())),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn two_exceedances_dispatch_at_the_deadline() {
        let lines = vec![sample(0, 80.0), sample(10, 120.0), sample(20, 130.0), sample(30, 85.0)];
        let (gw, out) = run(&lines, Some(120));
        assert_eq!(alarms(&out), vec![(50, "EC".into()), (50, "F1".into())]);
        // Every record was acked by the stand-in server.
        assert_eq!(gw.store().pending_len(), 0);
    }

    #[test]
    fn scheduled_cancel_and_inbound_threshold() {
        let lines = vec![
            sample(10, 120.0),
            sample(20, 130.0),
            r#"{"at": 49, "action": {"kind": "cancel", "channel": "ECG_HR"}}"#.to_string(),
            r#"{"at": 60, "sms": "THRESH|60|E01|ECG_HR|40|140|D01"}"#.to_string(),
        ];
        let (gw, out) = run(&lines, Some(100));
        assert!(alarms(&out).is_empty());
        assert_eq!(gw.threshold(VitalChannel::EcgHr).unwrap().high, 140.0);
    }

    #[test]
    fn failed_bulk_is_retried() {
        let lines = vec![
            sample(0, 80.0),
            r#"{"at": 1, "action": {"kind": "fail_bulk"}}"#.to_string(),
        ];
        let (gw, out) = run(&lines, Some(130));
        let kinds: Vec<_> = out
            .iter()
            .filter_map(|e| match e.effect {
                Effect::BulkFailed { .. } => Some("failed"),
                Effect::BulkAcked { .. } => Some("acked"),
                _ => None,
            })
            .collect();
        assert_eq!(kinds, vec!["failed", "acked"]);
        assert_eq!(gw.store().pending_len(), 0);
    }

    #[test]
    fn time_going_backwards_is_reported_with_its_line() {
        let text = format!("{}\n\n{}", sample(20, 80.0), sample(10, 80.0));
        let err = run_sim(gateway(), text.as_bytes(), None, |_| {}).err().unwrap();
        assert_eq!(err.line, 3);
        let err = run_sim(gateway(), "{\"nope\": 1}".as_bytes(), None, |_| {}).err().unwrap();
        assert_eq!(err.line, 1);
    }
}
