use serde::Serialize;

use crate::protocol::{Threshold, Timestamp, VitalChannel};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum MonitorState {
    Normal,
    /// One exceedance seen; the next sample decides.
    Flagged,
    /// Second consecutive exceedance seen, waiting for the elder to cancel
    /// or confirm.
    AlarmPending {
        deadline: Timestamp,
        /// Sample timestamp of the second exceedance.
        trigger_ts: Timestamp,
        sensor_id: String,
    },
    /// Alarm sent; re-arms only after the channel has been in range once.
    Dispatched,
}

/// What a single sample did to the monitor.
#[derive(Debug, Clone, PartialEq)]
pub enum Transition {
    None,
    FlagMarked,
    FlagCleared,
    AlarmArmed { deadline: Timestamp },
    Rearmed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelMonitor {
    pub channel: VitalChannel,
    pub threshold: Threshold,
    pub state: MonitorState,
    pub last_value: Option<f64>,
    pub last_ts: Option<Timestamp>,
}

impl ChannelMonitor {
    pub fn new(threshold: Threshold) -> Self {
        ChannelMonitor {
            channel: threshold.channel,
            threshold,
            state: MonitorState::Normal,
            last_value: None,
            last_ts: None,
        }
    }

    /// Feeds one sample through the two-consecutive-exceedance rule.
    pub fn observe(
        &mut self,
        value: f64,
        sample_ts: Timestamp,
        sensor_id: &str,
        now: Timestamp,
        alarm_wait_s: i64,
    ) -> Transition {
        self.last_value = Some(value);
        self.last_ts = Some(sample_ts);
        let exceeds = self.threshold.exceeded_by(value);
        match (&self.state, exceeds) {
            (MonitorState::Normal, false) => Transition::None,
            (MonitorState::Normal, true) => {
                self.state = MonitorState::Flagged;
                Transition::FlagMarked
            }
            (MonitorState::Flagged, false) => {
                self.state = MonitorState::Normal;
                Transition::FlagCleared
            }
            (MonitorState::Flagged, true) => {
                let deadline = now + alarm_wait_s;
                self.state = MonitorState::AlarmPending {
                    deadline,
                    trigger_ts: sample_ts,
                    sensor_id: sensor_id.to_string(),
                };
                Transition::AlarmArmed { deadline }
            }
            (MonitorState::AlarmPending { .. }, _) => Transition::None,
            (MonitorState::Dispatched, false) => {
                self.state = MonitorState::Normal;
                Transition::Rearmed
            }
            (MonitorState::Dispatched, true) => Transition::None,
        }
    }

    pub fn pending_deadline(&self) -> Option<Timestamp> {
        match self.state {
            MonitorState::AlarmPending { deadline, .. } => Some(deadline),
            _ => None,
        }
    }

    pub fn reset(&mut self) {
        self.state = MonitorState::Normal;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monitor() -> ChannelMonitor {
        ChannelMonitor::new(Threshold::new(VitalChannel::EcgHr, 50.0, 100.0, "D01", 0).unwrap())
    }

    fn feed(m: &mut ChannelMonitor, values: &[f64]) -> Vec<Transition> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| m.observe(*v, i as i64 * 10, "S1", i as i64 * 10, 30))
            .collect()
    }

    #[test]
    fn in_range_stays_normal() {
        let mut m = monitor();
        assert_eq!(feed(&mut m, &[80.0]), vec![Transition::None]);
        assert_eq!(m.state, MonitorState::Normal);
    }

    #[test]
    fn isolated_exceedance_clears() {
        let mut m = monitor();
        let t = feed(&mut m, &[80.0, 120.0, 85.0]);
        assert_eq!(t, vec![Transition::None, Transition::FlagMarked, Transition::FlagCleared]);
        assert_eq!(m.state, MonitorState::Normal);
    }

    #[test]
    fn two_adjacent_exceedances_arm() {
        let mut m = monitor();
        let t = feed(&mut m, &[120.0, 130.0]);
        assert_eq!(t[1], Transition::AlarmArmed { deadline: 40 });
        assert_eq!(m.pending_deadline(), Some(40));
        // Further samples neither extend nor re-arm.
        assert_eq!(m.observe(140.0, 20, "S1", 20, 30), Transition::None);
        assert_eq!(m.observe(70.0, 30, "S1", 30, 30), Transition::None);
        assert_eq!(m.pending_deadline(), Some(40));
    }

    #[test]
    fn band_is_inclusive() {
        let mut m = monitor();
        assert_eq!(feed(&mut m, &[50.0, 100.0]), vec![Transition::None, Transition::None]);
        assert_eq!(m.observe(49.999, 0, "S1", 0, 30), Transition::FlagMarked);
    }

    #[test]
    fn dispatched_rearms_on_in_range() {
        let mut m = monitor();
        m.state = MonitorState::Dispatched;
        assert_eq!(m.observe(130.0, 0, "S1", 0, 30), Transition::None);
        assert_eq!(m.observe(130.0, 1, "S1", 1, 30), Transition::None);
        assert_eq!(m.observe(80.0, 2, "S1", 2, 30), Transition::Rearmed);
        assert_eq!(m.state, MonitorState::Normal);
    }
}
