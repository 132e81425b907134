use std::collections::BTreeMap;

use serde::Serialize;

use crate::protocol::{EventRecord, Location, Timestamp, VitalChannel, VitalRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmOutcome {
    /// Dispatched after the waiting time ran out.
    Dispatched,
    /// Dispatched early because the elder confirmed.
    Confirmed,
    Cancelled,
    Quick,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlarmEntry {
    pub ts: Timestamp,
    pub channel: Option<VitalChannel>,
    pub sensor_id: String,
    pub trigger_ts: Timestamp,
    pub outcome: AlarmOutcome,
    pub location: Option<Location>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdviceEntry {
    pub ts: Timestamp,
    pub received_at: Timestamp,
    pub doctor_id: String,
    pub text: String,
}

/// Item awaiting upload, in frame order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum PendingKey {
    Record(String, u64),
    Event(u64),
}

/// On-phone record store.
#[derive(Debug, Default)]
pub struct LocalStore {
    latest: BTreeMap<VitalChannel, VitalRecord>,
    log: Vec<VitalRecord>,
    pending: BTreeMap<(String, u64), VitalRecord>,
    pending_events: BTreeMap<u64, EventRecord>,
    alarms: Vec<AlarmEntry>,
    advice: Vec<AdviceEntry>,
    watermarks: BTreeMap<String, u64>,
}

impl LocalStore {
    pub(crate) fn append(&mut self, rec: VitalRecord) {
        let newer = self
            .latest
            .get(&rec.channel)
            .is_none_or(|cur| rec.ts >= cur.ts);
        if newer {
            self.latest.insert(rec.channel, rec.clone());
        }
        self.pending
            .insert((rec.sensor_id.clone(), rec.seq), rec.clone());
        self.log.push(rec);
    }

    pub(crate) fn append_event(&mut self, ev: EventRecord) {
        self.pending_events.insert(ev.seq, ev);
    }

    pub(crate) fn push_alarm(&mut self, entry: AlarmEntry) {
        self.alarms.push(entry);
    }

    pub(crate) fn push_advice(&mut self, entry: AdviceEntry) {
        self.advice.push(entry);
    }

    pub(crate) fn pending_keys(&self) -> Vec<PendingKey> {
        self.pending
            .keys()
            .map(|(s, q)| PendingKey::Record(s.clone(), *q))
            .chain(self.pending_events.keys().map(|q| PendingKey::Event(*q)))
            .collect()
    }

    pub(crate) fn pending_snapshot(&self) -> (Vec<VitalRecord>, Vec<EventRecord>) {
        (
            self.pending.values().cloned().collect(),
            self.pending_events.values().cloned().collect(),
        )
    }

    /// Drops acknowledged entries; already-drained keys are ignored.
    pub(crate) fn drain(&mut self, keys: &[PendingKey]) -> usize {
        let mut drained = 0;
        for key in keys {
            match key {
                PendingKey::Record(sensor, seq) => {
                    if self.pending.remove(&(sensor.clone(), *seq)).is_some() {
                        drained += 1;
                    }
                    let mark = self.watermarks.entry(sensor.clone()).or_insert(*seq);
                    *mark = (*mark).max(*seq);
                }
                PendingKey::Event(seq) => {
                    if self.pending_events.remove(seq).is_some() {
                        drained += 1;
                    }
                }
            }
        }
        drained
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len() + self.pending_events.len()
    }

    pub fn pending_records(&self) -> impl Iterator<Item = &VitalRecord> {
        self.pending.values()
    }

    /// Every record ever stored, in arrival order.
    pub fn records(&self) -> &[VitalRecord] {
        &self.log
    }

    pub fn watermark(&self, sensor_id: &str) -> Option<u64> {
        self.watermarks.get(sensor_id).copied()
    }

    pub fn alarms_newest_first(&self) -> Vec<AlarmEntry> {
        self.alarms.iter().rev().cloned().collect()
    }

    pub fn advice_newest_first(&self) -> Vec<AdviceEntry> {
        self.advice.iter().rev().cloned().collect()
    }

    /// Latest record per channel, newest first.
    pub fn latest_vitals(&self) -> Vec<VitalRecord> {
        let mut v: Vec<_> = self.latest.values().cloned().collect();
        v.sort_by(|a, b| b.ts.cmp(&a.ts).then(a.channel.cmp(&b.channel)));
        v
    }
}
