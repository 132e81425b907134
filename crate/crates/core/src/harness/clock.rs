use std::collections::BTreeMap;

use crate::protocol::Timestamp;

/// Discrete-event queue in integer seconds. Events at the same time come
/// out in the order they were scheduled.
#[derive(Debug)]
pub struct VirtualClock<E> {
    now: Timestamp,
    queue: BTreeMap<(Timestamp, u64), E>,
    next_seq: u64,
}

impl<E> VirtualClock<E> {
    pub fn new(start: Timestamp) -> Self {
        VirtualClock {
            now: start,
            queue: BTreeMap::new(),
            next_seq: 0,
        }
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    /// Queues `event` at `at`; times in the past are moved up to now.
    pub fn schedule(&mut self, at: Timestamp, event: E) {
        debug_assert!(at >= self.now, "event at {at} scheduled in the past (now {})", self.now);
        let at = at.max(self.now);
        self.queue.insert((at, self.next_seq), event);
        self.next_seq += 1;
    }

    /// Removes the earliest event if it is due by `until` and moves the
    /// clock to its time.
    pub fn pop_until(&mut self, until: Timestamp) -> Option<(Timestamp, E)> {
        let entry = self.queue.first_entry()?;
        if entry.key().0 > until {
            return None;
        }
        let ((at, _), event) = entry.remove_entry();
        self.now = at;
        Some((at, event))
    }

    /// Moves the clock forward; never backward.
    pub fn advance_to(&mut self, until: Timestamp) {
        self.now = self.now.max(until);
    }

    pub fn next_at(&self) -> Option<Timestamp> {
        self.queue.keys().next().map(|(at, _)| *at)
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}
