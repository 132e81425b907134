use crate::protocol::{Location, Timestamp};

/// A positioning backend (GPS, cell, indoor beacons...). Returns `None`
/// when no fix is available.
pub trait PositionProvider: Send {
    fn locate(&mut self, ts: Timestamp) -> Option<Location>;
}

/// Always the same spot.
#[derive(Debug, Clone, Copy)]
pub struct FixedPosition(pub Location);

impl PositionProvider for FixedPosition {
    fn locate(&mut self, _ts: Timestamp) -> Option<Location> {
        Some(self.0)
    }
}

/// Step-hold track; no fix before the first point.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPosition {
    points: Vec<(Timestamp, Option<Location>)>,
}

impl ScriptedPosition {
    /// A `None` point models losing the fix from that time on.
    pub fn new(mut points: Vec<(Timestamp, Option<Location>)>) -> Self {
        points.sort_by_key(|(ts, _)| *ts);
        ScriptedPosition { points }
    }
}

impl PositionProvider for ScriptedPosition {
    fn locate(&mut self, ts: Timestamp) -> Option<Location> {
        self.points
            .iter()
            .take_while(|(at, _)| *at <= ts)
            .last()
            .and_then(|(_, loc)| *loc)
    }
}

/// Wraps a provider and falls back to the last known position.
pub struct PositionSource {
    provider: Box<dyn PositionProvider>,
    last_known: Location,
}

impl PositionSource {
    pub fn new(provider: Box<dyn PositionProvider>, initial: Location) -> Self {
        PositionSource {
            provider,
            last_known: initial,
        }
    }

    pub fn fixed(location: Location) -> Self {
        PositionSource::new(Box::new(FixedPosition(location)), location)
    }

    pub fn current(&mut self, ts: Timestamp) -> Location {
        if let Some(loc) = self.provider.locate(ts) {
            self.last_known = loc;
        }
        self.last_known
    }

    pub fn last_known(&self) -> Location {
        self.last_known
    }
}

impl std::fmt::Debug for PositionSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PositionSource")
            .field("last_known", &self.last_known)
            .finish_non_exhaustive()
    }
}
