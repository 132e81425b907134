//! Personal health information system and medical guidance.
//!
//! [`HealthServer`] owns accounts, doctor assignments, view grants, the
//! per-subject record store, message threads and the knowledge base. It is
//! plain synchronous state; callers serialize access (the HTTP service keeps
//! it behind a lock, the harness calls it from its event loop). Mutations
//! can be journaled and replayed, see [`journal`].

pub mod journal;
pub mod knowledge;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{
    bulk_from_payload, encode_sms, validate_id, BulkAck, BulkFrame, EventRecord, GatewayEventKind,
    SmsMessage, Threshold, Timestamp, VitalChannel, VitalRecord,
};

pub use journal::{Journal, JournalEntry};
pub use knowledge::{ConfidenceLevel, KnowledgeBase, KnowledgeEntry, KnowledgeSummary, Rating, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Elderly,
    Doctor,
    FamilyFriend,
    Specialist,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub user_id: String,
    pub role: Role,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSeed {
    pub id: String,
    pub role: Role,
    #[serde(default)]
    pub name: String,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentSeed {
    pub doctor: String,
    pub subject: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrantSeed {
    pub subject: String,
    pub grantee: String,
}

/// Accounts, bearer tokens, assignments and bootstrap grants.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default, rename = "user")]
    pub users: Vec<UserSeed>,
    #[serde(default, rename = "assignment")]
    pub assignments: Vec<AssignmentSeed>,
    #[serde(default, rename = "grant")]
    pub grants: Vec<GrantSeed>,
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServerError> {
        toml::from_str(text).map_err(|e| ServerError::Validation(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrantLevel {
    View,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    pub subject: String,
    pub grantee: String,
    pub level: GrantLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServerError {
    #[error("unauthenticated")]
    Unauthenticated,
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("storage: {0}")]
    Storage(String),
}

/// Advice a doctor sent from the server side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceRecord {
    pub ts: Timestamp,
    pub doctor_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub ts: Timestamp,
    pub actor: String,
    pub action: String,
}

/// A short message queued for delivery to a subject's gateway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutboundSms {
    pub elder_id: String,
    pub line: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectView {
    pub subject: String,
    pub records: Vec<VitalRecord>,
    pub thresholds: Vec<Threshold>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectHistory {
    pub events: Vec<EventRecord>,
    pub advice: Vec<AdviceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadMessage {
    pub author: String,
    pub ts: Timestamp,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageThread {
    pub thread_id: u64,
    pub participants: BTreeSet<String>,
    pub messages: Vec<ThreadMessage>,
}

/// What one bulk ingest did.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub ack: BulkAck,
    pub inserted_records: Vec<VitalRecord>,
    pub inserted_events: Vec<EventRecord>,
    pub rejected: Option<String>,
}

#[derive(Debug, Default)]
struct SubjectData {
    records: BTreeMap<(String, u64), VitalRecord>,
    events: BTreeMap<u64, EventRecord>,
    advice: Vec<AdviceRecord>,
    thresholds: BTreeMap<VitalChannel, Threshold>,
    audit: Vec<AuditEntry>,
}

fn is_alarm_event(kind: GatewayEventKind) -> bool {
    matches!(
        kind,
        GatewayEventKind::AlarmRaised
            | GatewayEventKind::AlarmCancelled
            | GatewayEventKind::AlarmDispatched
            | GatewayEventKind::QuickAlarm
    )
}

#[derive(Debug, Default)]
pub struct HealthServer {
    users: BTreeMap<String, UserAccount>,
    tokens: HashMap<String, String>,
    assignments: BTreeSet<(String, String)>,
    grants: BTreeSet<(String, String)>,
    subjects: BTreeMap<String, SubjectData>,
    threads: BTreeMap<u64, MessageThread>,
    next_thread_id: u64,
    knowledge: KnowledgeBase,
    outbox: Vec<OutboundSms>,
    journal: Option<Journal>,
}

impl HealthServer {
    pub fn new(config: &ServerConfig) -> Result<Self, ServerError> {
        let mut server = HealthServer::default();
        for u in &config.users {
            server.add_user(u)?;
        }
        for a in &config.assignments {
            server.assign(&a.doctor, &a.subject)?;
        }
        for g in &config.grants {
            server.insert_grant(&g.subject, &g.grantee)?;
        }
        Ok(server)
    }

    /// Builds the server from `config`, replays the journal at `path` if it
    /// exists and keeps appending to it.
    pub fn open(config: &ServerConfig, path: &Path) -> Result<Self, ServerError> {
        let mut server = HealthServer::new(config)?;
        journal::replay(&mut server, path)?;
        server.outbox.clear();
        server.journal = Some(Journal::append_to(path)?);
        Ok(server)
    }

    fn record(&mut self, entry: JournalEntry) -> Result<(), ServerError> {
        match self.journal.as_mut() {
            Some(j) => j.append(&entry),
            None => Ok(()),
        }
    }

    pub fn add_user(&mut self, seed: &UserSeed) -> Result<(), ServerError> {
        validate_id("user id", &seed.id).map_err(|e| ServerError::Validation(e.to_string()))?;
        if self.users.contains_key(&seed.id) {
            return Err(ServerError::Validation(format!("duplicate user {}", seed.id)));
        }
        if seed.token.is_empty() || self.tokens.contains_key(&seed.token) {
            return Err(ServerError::Validation(format!("user {} needs a unique token", seed.id)));
        }
        self.users.insert(
            seed.id.clone(),
            UserAccount {
                user_id: seed.id.clone(),
                role: seed.role,
                display_name: if seed.name.is_empty() { seed.id.clone() } else { seed.name.clone() },
            },
        );
        self.tokens.insert(seed.token.clone(), seed.id.clone());
        if seed.role == Role::Elderly {
            self.subjects.entry(seed.id.clone()).or_default();
        }
        Ok(())
    }

    pub fn assign(&mut self, doctor: &str, subject: &str) -> Result<(), ServerError> {
        self.require_role(doctor, Role::Doctor)?;
        self.require_subject(subject)?;
        self.assignments.insert((doctor.to_string(), subject.to_string()));
        Ok(())
    }

    fn insert_grant(&mut self, subject: &str, grantee: &str) -> Result<(), ServerError> {
        self.require_subject(subject)?;
        self.require_role(grantee, Role::FamilyFriend)?;
        self.grants.insert((subject.to_string(), grantee.to_string()));
        Ok(())
    }

    pub fn user(&self, user_id: &str) -> Option<&UserAccount> {
        self.users.get(user_id)
    }

    pub fn authenticate(&self, token: &str) -> Result<&UserAccount, ServerError> {
        self.tokens
            .get(token)
            .and_then(|id| self.users.get(id))
            .ok_or(ServerError::Unauthenticated)
    }

    fn require_user(&self, user_id: &str) -> Result<&UserAccount, ServerError> {
        self.users.get(user_id).ok_or(ServerError::Unauthenticated)
    }

    fn require_role(&self, user_id: &str, role: Role) -> Result<&UserAccount, ServerError> {
        let user = self
            .users
            .get(user_id)
            .ok_or_else(|| ServerError::NotFound(format!("user {user_id}")))?;
        if user.role != role {
            return Err(ServerError::Forbidden(format!("{user_id} is not a {role:?}").to_lowercase()));
        }
        Ok(user)
    }

    fn require_subject(&self, subject: &str) -> Result<(), ServerError> {
        match self.users.get(subject) {
            Some(u) if u.role == Role::Elderly => Ok(()),
            _ => Err(ServerError::NotFound(format!("subject {subject}"))),
        }
    }

    pub fn is_assigned(&self, doctor: &str, subject: &str) -> bool {
        self.assignments
            .contains(&(doctor.to_string(), subject.to_string()))
    }

    pub fn is_granted(&self, subject: &str, grantee: &str) -> bool {
        self.grants.contains(&(subject.to_string(), grantee.to_string()))
    }

    pub fn grants_of(&self, subject: &str) -> Vec<Grant> {
        self.grants
            .iter()
            .filter(|(s, _)| s == subject)
            .map(|(s, g)| Grant {
                subject: s.clone(),
                grantee: g.clone(),
                level: GrantLevel::View,
            })
            .collect()
    }

    /// Allow/deny decision for viewing a subject's data.
    pub fn can_view(&self, viewer: &str, subject: &str) -> bool {
        let (Some(v), Some(s)) = (self.users.get(viewer), self.users.get(subject)) else {
            return false;
        };
        if s.role != Role::Elderly {
            return false;
        }
        match v.role {
            Role::Elderly => viewer == subject,
            Role::Doctor => self.is_assigned(viewer, subject),
            Role::FamilyFriend => self.is_granted(subject, viewer),
            Role::Specialist => false,
        }
    }

    /// Every subject `viewer` may view, in id order.
    pub fn visible_subjects(&self, viewer: &str) -> Vec<String> {
        self.users
            .keys()
            .filter(|s| self.can_view(viewer, s))
            .cloned()
            .collect()
    }

    fn authorize_view(&self, viewer: &str, subject: &str) -> Result<(), ServerError> {
        self.require_user(viewer)?;
        if self.can_view(viewer, subject) {
            Ok(())
        } else {
            Err(ServerError::Forbidden(format!("{viewer} may not view {subject}")))
        }
    }

    fn authorize_doctor(&self, doctor: &str, subject: &str) -> Result<(), ServerError> {
        let user = self.require_user(doctor)?;
        if user.role != Role::Doctor {
            return Err(ServerError::Forbidden(format!("{doctor} is not a doctor")));
        }
        if !self.is_assigned(doctor, subject) {
            return Err(ServerError::Forbidden(format!("{doctor} is not assigned to {subject}")));
        }
        Ok(())
    }

    /// Subjects grant view access to family and friends.
    pub fn grant(&mut self, actor: &str, subject: &str, grantee: &str) -> Result<Grant, ServerError> {
        self.require_user(actor)?;
        if actor != subject {
            return Err(ServerError::Forbidden("only the subject can grant access".into()));
        }
        self.insert_grant(subject, grantee)?;
        self.record(JournalEntry::Grant {
            subject: subject.into(),
            grantee: grantee.into(),
        })?;
        Ok(Grant {
            subject: subject.into(),
            grantee: grantee.into(),
            level: GrantLevel::View,
        })
    }

    pub fn revoke(&mut self, actor: &str, subject: &str, grantee: &str) -> Result<bool, ServerError> {
        self.require_user(actor)?;
        if actor != subject {
            return Err(ServerError::Forbidden("only the subject can revoke access".into()));
        }
        let removed = self.grants.remove(&(subject.to_string(), grantee.to_string()));
        if removed {
            self.record(JournalEntry::Revoke {
                subject: subject.into(),
                grantee: grantee.into(),
            })?;
        }
        Ok(removed)
    }

    /// Decodes and ingests one bulk payload (the bytes after the length
    /// prefix). Malformed payloads are acknowledged with zero.
    pub fn ingest_payload(&mut self, payload: &[u8], now: Timestamp) -> IngestOutcome {
        match bulk_from_payload(payload) {
            Ok(frame) => self.ingest_bulk(&frame, now),
            Err(e) => IngestOutcome {
                ack: BulkAck {
                    frame_id: 0,
                    accepted: 0,
                },
                inserted_records: Vec::new(),
                inserted_events: Vec::new(),
                rejected: Some(e.to_string()),
            },
        }
    }

    /// Inserts new keys and skips known ones. The ack counts every entry in
    /// the frame, duplicates included, or zero if the frame is rejected.
    pub fn ingest_bulk(&mut self, frame: &BulkFrame, _now: Timestamp) -> IngestOutcome {
        let reject = |reason: String| IngestOutcome {
            ack: BulkAck {
                frame_id: frame.frame_id,
                accepted: 0,
            },
            inserted_records: Vec::new(),
            inserted_events: Vec::new(),
            rejected: Some(reason),
        };
        let elders = frame
            .records
            .iter()
            .map(|r| r.elder_id.as_str())
            .chain(frame.events.iter().map(|e| e.elder_id.as_str()));
        for elder in elders {
            if !self.subjects.contains_key(elder) {
                return reject(format!("unknown subject {elder}"));
            }
        }
        let mut inserted_records = Vec::new();
        let mut inserted_events = Vec::new();
        for rec in &frame.records {
            let data = self.subjects.get_mut(&rec.elder_id).expect("checked above");
            let key = (rec.sensor_id.clone(), rec.seq);
            if let std::collections::btree_map::Entry::Vacant(e) = data.records.entry(key) {
                e.insert(rec.clone());
                inserted_records.push(rec.clone());
            }
        }
        for ev in &frame.events {
            let data = self.subjects.get_mut(&ev.elder_id).expect("checked above");
            if let std::collections::btree_map::Entry::Vacant(e) = data.events.entry(ev.seq) {
                e.insert(ev.clone());
                inserted_events.push(ev.clone());
            }
        }
        if !inserted_records.is_empty() || !inserted_events.is_empty() {
            if let Err(e) = self.record(JournalEntry::Ingest {
                frame: BulkFrame {
                    frame_id: frame.frame_id,
                    records: inserted_records.clone(),
                    events: inserted_events.clone(),
                },
            }) {
                return reject(e.to_string());
            }
        }
        IngestOutcome {
            ack: BulkAck {
                frame_id: frame.frame_id,
                accepted: frame.len() as u64,
            },
            inserted_records,
            inserted_events,
            rejected: None,
        }
    }

    /// Records of `subject` with `since <= ts`, in time order, plus the
    /// thresholds currently set for the subject.
    pub fn view_records(
        &self,
        viewer: &str,
        subject: &str,
        since: Option<Timestamp>,
    ) -> Result<SubjectView, ServerError> {
        self.authorize_view(viewer, subject)?;
        let data = &self.subjects[subject];
        let mut records: Vec<VitalRecord> = data
            .records
            .values()
            .filter(|r| since.is_none_or(|s| r.ts >= s))
            .cloned()
            .collect();
        records.sort_by(|a, b| (a.ts, &a.sensor_id, a.seq).cmp(&(b.ts, &b.sensor_id, b.seq)));
        Ok(SubjectView {
            subject: subject.to_string(),
            records,
            thresholds: data.thresholds.values().cloned().collect(),
        })
    }

    /// Alarm events reported by the subject's gateway, newest first.
    pub fn alarm_history(&self, viewer: &str, subject: &str) -> Result<Vec<EventRecord>, ServerError> {
        self.authorize_view(viewer, subject)?;
        let mut events: Vec<EventRecord> = self.subjects[subject]
            .events
            .values()
            .filter(|e| is_alarm_event(e.kind))
            .cloned()
            .collect();
        events.sort_by_key(|e| std::cmp::Reverse((e.ts, e.seq)));
        Ok(events)
    }

    pub fn history(&self, viewer: &str, subject: &str) -> Result<SubjectHistory, ServerError> {
        self.authorize_view(viewer, subject)?;
        let data = &self.subjects[subject];
        Ok(SubjectHistory {
            events: data.events.values().cloned().collect(),
            advice: data.advice.clone(),
        })
    }

    pub fn thresholds(&self, subject: &str) -> Vec<Threshold> {
        self.subjects
            .get(subject)
            .map(|d| d.thresholds.values().cloned().collect())
            .unwrap_or_default()
    }

    pub fn audit_log(&self, subject: &str) -> Vec<AuditEntry> {
        self.subjects
            .get(subject)
            .map(|d| d.audit.clone())
            .unwrap_or_default()
    }

    /// Stores the new band and queues a THRESH message for the gateway.
    pub fn set_threshold(
        &mut self,
        doctor: &str,
        subject: &str,
        channel: VitalChannel,
        low: f64,
        high: f64,
        now: Timestamp,
    ) -> Result<SmsMessage, ServerError> {
        self.authorize_doctor(doctor, subject)?;
        let threshold = Threshold::new(channel, low, high, doctor, now)
            .map_err(|e| ServerError::Validation(e.to_string()))?;
        let msg = SmsMessage::Threshold {
            ts: now,
            elder_id: subject.into(),
            channel,
            low,
            high,
            doctor_id: doctor.into(),
        };
        let line = encode_sms(&msg).map_err(|e| ServerError::Validation(e.to_string()))?;
        self.record(JournalEntry::SetThreshold {
            doctor: doctor.into(),
            subject: subject.into(),
            channel,
            low,
            high,
            now,
        })?;
        let data = self.subjects.get_mut(subject).expect("authorized subject exists");
        data.thresholds.insert(channel, threshold);
        data.audit.push(AuditEntry {
            ts: now,
            actor: doctor.into(),
            action: format!("threshold {channel} [{low}, {high}]"),
        });
        self.outbox.push(OutboundSms {
            elder_id: subject.into(),
            line,
        });
        Ok(msg)
    }

    pub fn send_advice(
        &mut self,
        doctor: &str,
        subject: &str,
        text: &str,
        now: Timestamp,
    ) -> Result<SmsMessage, ServerError> {
        if text.trim().is_empty() {
            return Err(ServerError::Validation("advice text is empty".into()));
        }
        self.authorize_doctor(doctor, subject)?;
        let msg = SmsMessage::Advice {
            ts: now,
            elder_id: subject.into(),
            doctor_id: doctor.into(),
            text: text.into(),
        };
        let line = encode_sms(&msg).map_err(|e| ServerError::Validation(e.to_string()))?;
        self.record(JournalEntry::Advice {
            doctor: doctor.into(),
            subject: subject.into(),
            text: text.into(),
            now,
        })?;
        let data = self.subjects.get_mut(subject).expect("authorized subject exists");
        data.advice.push(AdviceRecord {
            ts: now,
            doctor_id: doctor.into(),
            text: text.into(),
        });
        data.audit.push(AuditEntry {
            ts: now,
            actor: doctor.into(),
            action: "advice".into(),
        });
        self.outbox.push(OutboundSms {
            elder_id: subject.into(),
            line,
        });
        Ok(msg)
    }

    /// Takes every queued gateway message, oldest first.
    pub fn drain_outbox(&mut self) -> Vec<OutboundSms> {
        std::mem::take(&mut self.outbox)
    }

    pub fn create_thread(
        &mut self,
        creator: &str,
        participants: &[String],
        now: Timestamp,
    ) -> Result<&MessageThread, ServerError> {
        self.require_user(creator)?;
        let mut set: BTreeSet<String> = participants.iter().cloned().collect();
        set.insert(creator.to_string());
        if set.len() < 2 {
            return Err(ServerError::Validation("a thread needs at least two participants".into()));
        }
        if let Some(unknown) = set.iter().find(|p| !self.users.contains_key(*p)) {
            return Err(ServerError::NotFound(format!("user {unknown}")));
        }
        self.record(JournalEntry::CreateThread {
            creator: creator.into(),
            participants: participants.to_vec(),
            now,
        })?;
        self.next_thread_id += 1;
        let id = self.next_thread_id;
        self.threads.insert(
            id,
            MessageThread {
                thread_id: id,
                participants: set,
                messages: Vec::new(),
            },
        );
        Ok(&self.threads[&id])
    }

    fn thread_for(&self, user: &str, thread_id: u64) -> Result<&MessageThread, ServerError> {
        self.require_user(user)?;
        let thread = self
            .threads
            .get(&thread_id)
            .ok_or_else(|| ServerError::NotFound(format!("thread {thread_id}")))?;
        if !thread.participants.contains(user) {
            return Err(ServerError::Forbidden(format!(
                "{user} is not a participant of thread {thread_id}"
            )));
        }
        Ok(thread)
    }

    pub fn post_message(
        &mut self,
        author: &str,
        thread_id: u64,
        text: &str,
        now: Timestamp,
    ) -> Result<&MessageThread, ServerError> {
        self.thread_for(author, thread_id)?;
        if text.trim().is_empty() {
            return Err(ServerError::Validation("message text is empty".into()));
        }
        self.record(JournalEntry::Post {
            author: author.into(),
            thread_id,
            text: text.into(),
            now,
        })?;
        let thread = self.threads.get_mut(&thread_id).expect("checked above");
        thread.messages.push(ThreadMessage {
            author: author.into(),
            ts: now,
            text: text.into(),
        });
        Ok(thread)
    }

    /// Threads `user` takes part in, oldest first.
    pub fn threads_for(&self, user: &str) -> Result<Vec<&MessageThread>, ServerError> {
        self.require_user(user)?;
        Ok(self
            .threads
            .values()
            .filter(|t| t.participants.contains(user))
            .collect())
    }

    pub fn read_thread(&self, user: &str, thread_id: u64) -> Result<&MessageThread, ServerError> {
        self.thread_for(user, thread_id)
    }

    pub fn add_knowledge(
        &mut self,
        specialist: &str,
        keywords: &[String],
        area: &str,
        body: &str,
        now: Timestamp,
    ) -> Result<&KnowledgeEntry, ServerError> {
        let user = self.require_user(specialist)?;
        if user.role != Role::Specialist {
            return Err(ServerError::Forbidden(format!("{specialist} is not a specialist")));
        }
        let keywords: Vec<String> = keywords
            .iter()
            .map(|k| k.trim().to_string())
            .filter(|k| !k.is_empty())
            .collect();
        if keywords.is_empty() {
            return Err(ServerError::Validation("keyword list is empty".into()));
        }
        if let Some(k) = keywords.iter().find(|k| k.contains(char::is_whitespace)) {
            return Err(ServerError::Validation(format!("keyword {k:?} is not a single token")));
        }
        self.record(JournalEntry::AddKnowledge {
            specialist: specialist.into(),
            keywords: keywords.clone(),
            area: area.into(),
            body: body.into(),
            now,
        })?;
        Ok(self
            .knowledge
            .insert(specialist, keywords, area.trim().to_string(), body.to_string(), now))
    }

    /// One rating per specialist per entry; rating again replaces it.
    pub fn evaluate_knowledge(
        &mut self,
        specialist: &str,
        entry_id: u64,
        rating: Rating,
    ) -> Result<&KnowledgeEntry, ServerError> {
        let user = self.require_user(specialist)?;
        if user.role != Role::Specialist {
            return Err(ServerError::Forbidden(format!("{specialist} is not a specialist")));
        }
        if self.knowledge.get(entry_id).is_none() {
            return Err(ServerError::NotFound(format!("knowledge entry {entry_id}")));
        }
        self.record(JournalEntry::Evaluate {
            specialist: specialist.into(),
            entry_id,
            rating,
        })?;
        let entry = self.knowledge.get_mut(entry_id).expect("checked above");
        entry.evaluations.insert(specialist.to_string(), rating);
        Ok(entry)
    }

    pub fn record_feedback(
        &mut self,
        user: &str,
        entry_id: u64,
        verdict: Verdict,
    ) -> Result<&KnowledgeEntry, ServerError> {
        self.require_user(user)?;
        if self.knowledge.get(entry_id).is_none() {
            return Err(ServerError::NotFound(format!("knowledge entry {entry_id}")));
        }
        self.record(JournalEntry::Feedback {
            user: user.into(),
            entry_id,
            verdict,
        })?;
        let entry = self.knowledge.get_mut(entry_id).expect("checked above");
        entry.feedback_steps += match verdict {
            Verdict::Helpful => 1,
            Verdict::Unhelpful => -1,
        };
        Ok(entry)
    }

    pub fn query_knowledge(
        &self,
        keyword: &str,
        area: Option<&str>,
        min_level: ConfidenceLevel,
    ) -> Result<Vec<&KnowledgeEntry>, ServerError> {
        if keyword.trim().is_empty() {
            return Err(ServerError::Validation("keyword is empty".into()));
        }
        if min_level == ConfidenceLevel::Weak {
            return Err(ServerError::Validation("min_level must be credit or general".into()));
        }
        Ok(self.knowledge.query(keyword.trim(), area, min_level))
    }

    pub fn knowledge_entry(&self, entry_id: u64) -> Option<&KnowledgeEntry> {
        self.knowledge.get(entry_id)
    }

    pub fn knowledge(&self) -> &KnowledgeBase {
        &self.knowledge
    }

    /// Every stored record key of a subject.
    pub fn record_keys(&self, subject: &str) -> BTreeSet<(String, u64)> {
        self.subjects
            .get(subject)
            .map(|d| d.records.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn record_count(&self, subject: &str) -> usize {
        self.subjects.get(subject).map_or(0, |d| d.records.len())
    }
}
