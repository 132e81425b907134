//! A gateway on real sockets: samples and user input arrive on a channel,
//! THRESH/ADVICE lines on the SMS bus, bulk frames go to the server's
//! ingest listener and ALARM lines to the emergency centre.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::Arc;

use icare_client::{AlarmSender, BulkSender, BusReceiver, ClientError};
use icare_core::gateway::{Effect, Gateway, PromptResponse, SystemMode};
use icare_core::protocol::{BulkFrame, Timestamp, VitalChannel, VitalRecord};
use icare_service::{sleep_until, Clock};
use serde::Serialize;
use tokio::sync::mpsc;

#[derive(Debug, Clone, PartialEq)]
pub enum NodeInput {
    Sample(VitalRecord),
    Prompt(VitalChannel, PromptResponse),
    Quick,
    Mode(SystemMode),
    /// Treat the next bulk upload as lost.
    FailNextBulk,
}

#[derive(Debug, Clone, Copy)]
pub struct NodeLinks {
    pub bulk: SocketAddr,
    pub sms_bus: SocketAddr,
    pub sms_intake: SocketAddr,
}

/// What the node did, in order. `at` is the node's clock when it happened.
#[derive(Debug, Clone, Serialize)]
pub struct NodeEvent {
    #[serde(rename = "at")]
    pub ts: Timestamp,
    #[serde(flatten)]
    pub effect: Effect,
}

pub struct GatewayNode {
    gateway: Gateway,
    clock: Arc<dyn Clock>,
    links: NodeLinks,
    emergency_target: String,
    /// Ticks after this time are not run.
    tick_until: Option<Timestamp>,
    bulk: Option<BulkSender>,
    alarm: Option<AlarmSender>,
    fail_next_bulk: bool,
    events: mpsc::UnboundedSender<NodeEvent>,
}

impl GatewayNode {
    /// `emergency_target` is the alarm target routed to the emergency
    /// centre; alarms for other targets are only reported.
    pub fn new(
        gateway: Gateway,
        clock: Arc<dyn Clock>,
        links: NodeLinks,
        emergency_target: impl Into<String>,
        events: mpsc::UnboundedSender<NodeEvent>,
    ) -> Self {
        GatewayNode {
            gateway,
            clock,
            links,
            emergency_target: emergency_target.into(),
            tick_until: None,
            bulk: None,
            alarm: None,
            fail_next_bulk: false,
            events,
        }
    }

    pub fn tick_until(mut self, t: Timestamp) -> Self {
        self.tick_until = Some(t);
        self
    }

    /// Runs until `inputs` closes, then hands the gateway back.
    pub async fn run(mut self, mut inputs: mpsc::Receiver<NodeInput>) -> Result<Gateway, ClientError> {
        let elder = self.gateway.elder_id().to_string();
        let mut bus = BusReceiver::connect(self.links.sms_bus, &elder).await?;
        let mut bus_open = true;
        loop {
            let wake = self.gateway.next_wakeup();
            let may_tick = self.tick_until.is_none_or(|h| wake <= h);
            let clock = self.clock.clone();
            let effects = tokio::select! {
                input = inputs.recv() => match input {
                    Some(i) => self.apply(i),
                    None => break,
                },
                line = bus.next_line(), if bus_open => match line {
                    Some(Ok(line)) => {
                        let now = self.clock.now();
                        self.gateway.handle_sms_line(&line, now).unwrap_or_else(|e| {
                            vec![Effect::Warning { ts: now, message: format!("bus line {line:?}: {e}") }]
                        })
                    }
                    other => {
                        tracing::warn!("sms bus closed: {:?}", other.map(|r| r.err()));
                        bus_open = false;
                        Vec::new()
                    }
                },
                _ = async move { sleep_until(clock.as_ref(), wake).await }, if may_tick => {
                    self.gateway.tick(self.clock.now())
                }
            };
            self.process(effects).await;
        }
        Ok(self.gateway)
    }

    fn apply(&mut self, input: NodeInput) -> Vec<Effect> {
        let now = self.clock.now();
        let warn = |message: String| vec![Effect::Warning { ts: now, message }];
        match input {
            NodeInput::Sample(rec) => self
                .gateway
                .ingest_sample(rec, now)
                .unwrap_or_else(|e| warn(e.to_string())),
            NodeInput::Prompt(channel, response) => self.gateway.respond_to_alarm_prompt(channel, response, now),
            NodeInput::Quick => self.gateway.quick_alarm(now),
            NodeInput::Mode(mode) => self
                .gateway
                .set_mode(mode, now)
                .unwrap_or_else(|e| warn(e.to_string())),
            NodeInput::FailNextBulk => {
                self.fail_next_bulk = true;
                Vec::new()
            }
        }
    }

    async fn process(&mut self, effects: Vec<Effect>) {
        let mut queue: VecDeque<Effect> = effects.into();
        while let Some(effect) = queue.pop_front() {
            let now = self.clock.now();
            tracing::debug!(now, ?effect);
            match &effect {
                Effect::SmsOut { to, line } if *to == self.emergency_target => self.send_alarm(line).await,
                Effect::SmsOut { to, line } => tracing::info!(to, "family alarm: {}", line.trim_end()),
                Effect::BulkUpload { frame_id, frame, .. } => {
                    let follow = self.upload(*frame_id, frame.clone(), now).await;
                    queue.extend(follow);
                }
                _ => {}
            }
            let _ = self.events.send(NodeEvent { ts: now, effect });
        }
    }

    async fn send_alarm(&mut self, line: &str) {
        // One reconnect per alarm; the gateway has no retry rule for ALARMs.
        for _ in 0..2 {
            if self.alarm.is_none() {
                match AlarmSender::connect(self.links.sms_intake).await {
                    Ok(a) => self.alarm = Some(a),
                    Err(e) => {
                        tracing::error!("emergency centre unreachable: {e}");
                        return;
                    }
                }
            }
            let sender = self.alarm.as_mut().expect("connected");
            match sender.send(line).await {
                Ok(reply) => {
                    tracing::info!("emergency centre: {reply}");
                    return;
                }
                Err(e) => {
                    tracing::warn!("alarm send failed: {e}");
                    self.alarm = None;
                }
            }
        }
    }

    async fn upload(&mut self, frame_id: u64, frame: BulkFrame, now: Timestamp) -> Vec<Effect> {
        if std::mem::take(&mut self.fail_next_bulk) {
            return self.gateway.on_bulk_failure(frame_id, now);
        }
        if self.bulk.is_none() {
            match BulkSender::connect(self.links.bulk).await {
                Ok(b) => self.bulk = Some(b),
                Err(e) => {
                    tracing::warn!("bulk ingest unreachable: {e}");
                    return self.gateway.on_bulk_failure(frame_id, now);
                }
            }
        }
        match self.bulk.as_mut().expect("connected").send(&frame).await {
            Ok(ack) => self.gateway.on_bulk_ack(ack, self.clock.now()),
            Err(e) => {
                tracing::warn!("bulk upload failed: {e}");
                self.bulk = None;
                self.gateway.on_bulk_failure(frame_id, now)
            }
        }
    }
}
