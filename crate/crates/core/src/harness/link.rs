use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::protocol::Timestamp;
use crate::sensors::LinkSpec;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub duplicated: u64,
}

impl LinkStats {
    /// Every message sent was either delivered (once, or twice when
    /// duplicated) or dropped.
    pub fn balanced(&self) -> bool {
        self.sent + self.duplicated == self.delivered + self.dropped
    }
}

/// What happens to one message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub index: u64,
    pub deliver_at: Timestamp,
    /// 0 when dropped, 2 when duplicated.
    pub copies: u8,
}

/// One direction of a simulated transport with scripted faults.
#[derive(Debug, Clone)]
pub struct SimLink {
    latency_s: Timestamp,
    drop: BTreeSet<u64>,
    duplicate: BTreeSet<u64>,
    stats: LinkStats,
}

impl SimLink {
    pub fn new(spec: &LinkSpec) -> Self {
        SimLink {
            latency_s: spec.latency_s,
            drop: spec.drop.iter().copied().collect(),
            duplicate: spec.duplicate.iter().copied().collect(),
            stats: LinkStats::default(),
        }
    }

    pub fn latency_s(&self) -> Timestamp {
        self.latency_s
    }

    /// Registers a send at `now`. `force_drop` loses the message regardless
    /// of the schedule. A message listed for both drop and duplicate is
    /// dropped.
    pub fn send(&mut self, now: Timestamp, force_drop: bool) -> Transmission {
        let index = self.stats.sent;
        self.stats.sent += 1;
        let copies = if force_drop || self.drop.contains(&index) {
            self.stats.dropped += 1;
            0
        } else if self.duplicate.contains(&index) {
            self.stats.duplicated += 1;
            2
        } else {
            1
        };
        Transmission {
            index,
            deliver_at: now + self.latency_s,
            copies,
        }
    }

    pub fn delivered(&mut self) {
        self.stats.delivered += 1;
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_faults_by_index() {
        let mut link = SimLink::new(&LinkSpec {
            latency_s: 2,
            drop: vec![1],
            duplicate: vec![2, 1],
        });
        let copies: Vec<u8> = (0..4).map(|_| link.send(10, false).copies).collect();
        assert_eq!(copies, vec![1, 0, 2, 1]);
        assert_eq!(link.send(10, false).deliver_at, 12);
        for _ in 0..5 {
            link.delivered();
        }
        let s = link.stats();
        assert_eq!((s.sent, s.dropped, s.duplicated, s.delivered), (5, 1, 1, 5));
        assert!(s.balanced());
    }
}
