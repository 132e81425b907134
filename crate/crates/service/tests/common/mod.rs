#![allow(dead_code)]

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use icare_client::Client;
use icare_core::protocol::{BulkFrame, EventRecord, GatewayEventKind, Timestamp, VitalChannel, VitalRecord};
use icare_core::server::{AssignmentSeed, GrantSeed, Role, ServerConfig, UserSeed};
use icare_service::{Clock, RunningService, ServiceConfig};

/// Clock the test moves by hand.
#[derive(Default)]
pub struct TestClock(AtomicI64);

impl TestClock {
    pub fn set(&self, t: Timestamp) {
        self.0.store(t, Ordering::SeqCst);
    }
}

impl Clock for TestClock {
    fn now(&self) -> Timestamp {
        self.0.load(Ordering::SeqCst)
    }
}

pub fn token(id: &str) -> String {
    format!("token-{id}")
}

pub fn config() -> ServerConfig {
    let user = |id: &str, role| UserSeed {
        id: id.into(),
        role,
        name: format!("user {id}"),
        token: token(id),
    };
    ServerConfig {
        users: vec![
            user("E01", Role::Elderly),
            user("E02", Role::Elderly),
            user("D01", Role::Doctor),
            user("D02", Role::Doctor),
            user("F01", Role::FamilyFriend),
            user("F02", Role::FamilyFriend),
            user("SP1", Role::Specialist),
            user("SP2", Role::Specialist),
            user("SP3", Role::Specialist),
        ],
        assignments: vec![AssignmentSeed {
            doctor: "D01".into(),
            subject: "E01".into(),
        }],
        grants: vec![GrantSeed {
            subject: "E01".into(),
            grantee: "F01".into(),
        }],
    }
}

pub struct Fixture {
    pub service: RunningService,
    pub clock: Arc<TestClock>,
}

impl Fixture {
    pub async fn start() -> Self {
        Self::with_config(ServiceConfig::ephemeral(config())).await
    }

    pub async fn with_config(cfg: ServiceConfig) -> Self {
        let clock = Arc::new(TestClock::default());
        let service = icare_service::start(cfg, clock.clone()).await.expect("service starts");
        Fixture { service, clock }
    }

    pub fn client(&self, user: &str) -> Client {
        Client::new(self.service.http_url(), Some(token(user)))
    }

    pub fn anonymous(&self) -> Client {
        Client::new(self.service.http_url(), None)
    }
}

pub fn vital(elder: &str, sensor: &str, seq: u64, value: f64) -> VitalRecord {
    VitalRecord {
        elder_id: elder.into(),
        sensor_id: sensor.into(),
        channel: VitalChannel::EcgHr,
        seq,
        ts: seq as Timestamp * 10,
        value,
    }
}

pub fn frame(frame_id: u64, elder: &str, seqs: std::ops::Range<u64>) -> BulkFrame {
    BulkFrame::new(
        frame_id,
        seqs.map(|s| vital(elder, "S-ECG-1", s, 70.0 + s as f64)).collect(),
        Vec::new(),
    )
}

pub fn alarm_event(elder: &str, seq: u64, ts: Timestamp) -> EventRecord {
    EventRecord {
        elder_id: elder.into(),
        seq,
        kind: GatewayEventKind::AlarmDispatched,
        ts,
        detail: "ECG_HR".into(),
    }
}
