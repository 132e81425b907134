use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

pub use icare_core::api::LiveEvent;
use icare_core::emergency::{AuditEvent, EmergencyCentre};
use icare_core::protocol::Timestamp;
use icare_core::server::HealthServer;
use tokio::sync::{broadcast, mpsc};

/// Source of "now" for every component; swapped between wall time and a
/// scenario clock.
pub trait Clock: Send + Sync + 'static {
    fn now(&self) -> Timestamp;

    /// Wall time that `secs` of this clock take.
    fn wall(&self, secs: Timestamp) -> Duration {
        Duration::from_secs(secs.max(0) as u64)
    }

    /// Wall time left until this clock first reads `t`. The default is
    /// only exact to a whole tick.
    fn until(&self, t: Timestamp) -> Duration {
        self.wall(t - self.now())
    }
}

/// Resolves once `clock` reads at least `t`.
pub async fn sleep_until(clock: &dyn Clock, t: Timestamp) {
    loop {
        let now = clock.now();
        if now >= t {
            return;
        }
        // Coarse clocks can wake a hair early; go round again.
        tokio::time::sleep(clock.until(t).max(Duration::from_millis(1))).await;
    }
}

/// Unix seconds.
#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs() as Timestamp)
    }

    fn until(&self, t: Timestamp) -> Duration {
        let target = Duration::from_secs(t.max(0) as u64);
        let since = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        target.saturating_sub(since)
    }
}

/// Seconds since construction, multiplied by `speed`.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioClock {
    origin: Instant,
    speed: f64,
}

impl ScenarioClock {
    pub fn new(speed: f64) -> Self {
        ScenarioClock {
            origin: Instant::now(),
            speed,
        }
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    /// Wall time at which scenario time `t` is reached.
    pub fn instant_of(&self, t: Timestamp) -> Instant {
        self.origin + self.wall(t)
    }
}

impl Clock for ScenarioClock {
    fn now(&self) -> Timestamp {
        (self.origin.elapsed().as_secs_f64() * self.speed).floor() as Timestamp
    }

    fn wall(&self, secs: Timestamp) -> Duration {
        Duration::from_secs_f64(secs.max(0) as f64 / self.speed)
    }

    fn until(&self, t: Timestamp) -> Duration {
        self.instant_of(t).saturating_duration_since(Instant::now())
    }
}

#[derive(Debug, Clone)]
pub struct LiveMessage {
    pub subject: String,
    pub event: LiveEvent,
}

#[derive(Default)]
struct Mailbox {
    queued: VecDeque<String>,
    subscribers: Vec<mpsc::UnboundedSender<String>>,
}

/// Store-and-forward delivery of THRESH/ADVICE lines to gateways, keyed by
/// elder id. Lines wait until the elder's gateway is connected.
#[derive(Default)]
pub struct SmsBus {
    boxes: Mutex<HashMap<String, Mailbox>>,
}

impl SmsBus {
    pub fn deliver(&self, elder_id: &str, line: String) {
        let mut boxes = self.boxes.lock().expect("bus lock");
        let mailbox = boxes.entry(elder_id.to_string()).or_default();
        mailbox.subscribers.retain(|s| !s.is_closed());
        if mailbox.subscribers.is_empty() {
            mailbox.queued.push_back(line);
            return;
        }
        for s in &mailbox.subscribers {
            let _ = s.send(line.clone());
        }
    }

    /// Registers a gateway connection; queued lines are handed over first.
    pub fn subscribe(&self, elder_id: &str) -> mpsc::UnboundedReceiver<String> {
        let (tx, rx) = mpsc::unbounded_channel();
        let mut boxes = self.boxes.lock().expect("bus lock");
        let mailbox = boxes.entry(elder_id.to_string()).or_default();
        for line in mailbox.queued.drain(..) {
            let _ = tx.send(line);
        }
        mailbox.subscribers.push(tx);
        rx
    }

    pub fn queued(&self, elder_id: &str) -> usize {
        self.boxes
            .lock()
            .expect("bus lock")
            .get(elder_id)
            .map_or(0, |m| m.queued.len())
    }
}

/// Everything the listeners share.
pub struct AppState {
    server: Mutex<HealthServer>,
    emergency: Mutex<EmergencyCentre>,
    audit: Mutex<Option<File>>,
    pub bus: SmsBus,
    pub live: broadcast::Sender<LiveMessage>,
    pub clock: Arc<dyn Clock>,
}

impl AppState {
    pub fn new(server: HealthServer, clock: Arc<dyn Clock>, audit_log: Option<&Path>) -> std::io::Result<Self> {
        let audit = audit_log
            .map(|p| OpenOptions::new().create(true).append(true).open(p))
            .transpose()?;
        Ok(AppState {
            server: Mutex::new(server),
            emergency: Mutex::new(EmergencyCentre::new()),
            audit: Mutex::new(audit),
            bus: SmsBus::default(),
            live: broadcast::channel(1024).0,
            clock,
        })
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn server(&self) -> MutexGuard<'_, HealthServer> {
        self.server.lock().expect("server lock")
    }

    pub fn emergency(&self) -> MutexGuard<'_, EmergencyCentre> {
        self.emergency.lock().expect("emergency lock")
    }

    pub fn publish(&self, subject: &str, event: LiveEvent) {
        // No receivers is fine.
        let _ = self.live.send(LiveMessage {
            subject: subject.to_string(),
            event,
        });
    }

    /// Moves queued gateway messages from the server onto the bus.
    pub fn flush_outbox(&self) {
        let outbox = self.server().drain_outbox();
        for sms in outbox {
            // The bus framing adds the terminator.
            let line = sms.line.trim_end_matches('\n').to_string();
            self.bus.deliver(&sms.elder_id, line);
        }
    }

    pub fn write_audit(&self, event: &AuditEvent) {
        let mut guard = self.audit.lock().expect("audit lock");
        if let Some(file) = guard.as_mut() {
            let line = serde_json::to_string(event).expect("audit serializes");
            if let Err(e) = writeln!(file, "{line}").and_then(|_| file.flush()) {
                tracing::warn!("audit log write failed: {e}");
            }
        }
    }
}
