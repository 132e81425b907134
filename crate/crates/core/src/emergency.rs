//! Emergency centre: turns ALARM messages into ambulance dispatch records.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{decode_sms, DecodeError, Location, SmsMessage, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchStatus {
    Dispatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub dispatch_id: u64,
    pub alarm_ts: Timestamp,
    pub elder_id: String,
    pub sensor_id: String,
    pub location: Location,
    pub received_at: Timestamp,
    pub status: DispatchStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "audit", rename_all = "snake_case")]
pub enum AuditEvent {
    Dispatched {
        received_at: Timestamp,
        dispatch_id: u64,
        elder_id: String,
        sensor_id: String,
        alarm_ts: Timestamp,
        location: String,
    },
    Duplicate {
        received_at: Timestamp,
        elder_id: String,
        sensor_id: String,
        alarm_ts: Timestamp,
    },
    Rejected {
        received_at: Timestamp,
        reason: String,
        line: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntakeError {
    #[error("not an alarm: {0}")]
    WrongKind(&'static str),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Intake {
    Dispatched(DispatchRecord),
    /// The same episode was already dispatched.
    Duplicate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DispatchFilter {
    #[serde(default)]
    pub elder_id: Option<String>,
}

#[derive(Debug, Default)]
pub struct EmergencyCentre {
    dispatches: Vec<DispatchRecord>,
    seen: HashSet<(String, String, Timestamp)>,
    audit: Vec<AuditEvent>,
}

impl EmergencyCentre {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses one incoming line and dispatches once per
    /// `(elder_id, sensor_id, alarm ts)`.
    pub fn receive_alarm(&mut self, line: &str, now: Timestamp) -> Result<Intake, IntakeError> {
        let rejected = |reason: String| AuditEvent::Rejected {
            received_at: now,
            reason,
            line: line.trim_end_matches('\n').to_string(),
        };
        let msg = match decode_sms(line) {
            Ok(m) => m,
            Err(e) => {
                self.audit.push(rejected(e.to_string()));
                return Err(e.into());
            }
        };
        let SmsMessage::Alarm {
            ts,
            elder_id,
            sensor_id,
            location,
        } = msg
        else {
            let tag = msg.kind().tag();
            self.audit.push(rejected(format!("not an alarm: {tag}")));
            return Err(IntakeError::WrongKind(tag));
        };
        let key = (elder_id.clone(), sensor_id.clone(), ts);
        if !self.seen.insert(key) {
            self.audit.push(AuditEvent::Duplicate {
                received_at: now,
                elder_id,
                sensor_id,
                alarm_ts: ts,
            });
            return Ok(Intake::Duplicate);
        }
        let record = DispatchRecord {
            dispatch_id: self.dispatches.len() as u64 + 1,
            alarm_ts: ts,
            elder_id,
            sensor_id,
            location,
            received_at: now,
            status: DispatchStatus::Dispatched,
        };
        self.audit.push(AuditEvent::Dispatched {
            received_at: now,
            dispatch_id: record.dispatch_id,
            elder_id: record.elder_id.clone(),
            sensor_id: record.sensor_id.clone(),
            alarm_ts: ts,
            location: location.to_wire(),
        });
        self.dispatches.push(record.clone());
        Ok(Intake::Dispatched(record))
    }

    /// Newest first.
    pub fn list_dispatches(&self, filter: &DispatchFilter) -> Vec<DispatchRecord> {
        self.dispatches
            .iter()
            .rev()
            .filter(|d| filter.elder_id.as_deref().is_none_or(|e| d.elder_id == e))
            .cloned()
            .collect()
    }

    pub fn dispatch_count(&self) -> usize {
        self.dispatches.len()
    }

    pub fn audit_log(&self) -> &[AuditEvent] {
        &self.audit
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = "ALARM|1700000000|E01|S-ECG-1|38.88000,121.52000\n";

    #[test]
    fn valid_alarm_dispatches_to_its_location() {
        let mut ec = EmergencyCentre::new();
        let Intake::Dispatched(d) = ec.receive_alarm(LINE, 1_700_000_002).unwrap() else {
            panic!("expected dispatch");
        };
        assert_eq!(d.location.to_wire(), "38.88000,121.52000");
        assert_eq!((d.elder_id.as_str(), d.sensor_id.as_str()), ("E01", "S-ECG-1"));
        assert_eq!(d.received_at, 1_700_000_002);
    }

    #[test]
    fn duplicate_delivery_dispatches_once() {
        let mut ec = EmergencyCentre::new();
        ec.receive_alarm(LINE, 1).unwrap();
        assert_eq!(ec.receive_alarm(LINE, 2).unwrap(), Intake::Duplicate);
        assert_eq!(ec.dispatch_count(), 1);
        assert!(matches!(ec.audit_log()[1], AuditEvent::Duplicate { .. }));
    }

    #[test]
    fn wrong_kind_and_garbage_are_rejected() {
        let mut ec = EmergencyCentre::new();
        assert_eq!(
            ec.receive_alarm("THRESH|0|E01|ECG_HR|50|100|D01", 1),
            Err(IntakeError::WrongKind("THRESH"))
        );
        assert!(ec.receive_alarm("garbage", 1).is_err());
        assert_eq!(ec.dispatch_count(), 0);
        assert_eq!(ec.audit_log().len(), 2);
    }

    #[test]
    fn listing_filters_and_orders() {
        let mut ec = EmergencyCentre::new();
        assert!(ec.list_dispatches(&DispatchFilter::default()).is_empty());
        ec.receive_alarm("ALARM|1|E01|S1|1.00000,1.00000", 1).unwrap();
        ec.receive_alarm("ALARM|2|E02|S1|1.00000,1.00000", 2).unwrap();
        ec.receive_alarm("ALARM|3|E01|S1|1.00000,1.00000", 3).unwrap();
        let all = ec.list_dispatches(&DispatchFilter::default());
        assert_eq!(all.iter().map(|d| d.alarm_ts).collect::<Vec<_>>(), vec![3, 2, 1]);
        let e01 = ec.list_dispatches(&DispatchFilter {
            elder_id: Some("E01".into()),
        });
        assert_eq!(e01.iter().map(|d| d.alarm_ts).collect::<Vec<_>>(), vec![3, 1]);
    }
}
