//! Append-only JSON-lines journal of server mutations, replayed at start-up.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HealthServer, Rating, ServerError, Verdict};
use crate::protocol::{BulkFrame, Timestamp, VitalChannel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum JournalEntry {
    Ingest {
        frame: BulkFrame,
    },
    SetThreshold {
        doctor: String,
        subject: String,
        channel: VitalChannel,
        low: f64,
        high: f64,
        now: Timestamp,
    },
    Advice {
        doctor: String,
        subject: String,
        text: String,
        now: Timestamp,
    },
    Grant {
        subject: String,
        grantee: String,
    },
    Revoke {
        subject: String,
        grantee: String,
    },
    CreateThread {
        creator: String,
        participants: Vec<String>,
        now: Timestamp,
    },
    Post {
        author: String,
        thread_id: u64,
        text: String,
        now: Timestamp,
    },
    AddKnowledge {
        specialist: String,
        keywords: Vec<String>,
        area: String,
        body: String,
        now: Timestamp,
    },
    Evaluate {
        specialist: String,
        entry_id: u64,
        rating: Rating,
    },
    Feedback {
        user: String,
        entry_id: u64,
        verdict: Verdict,
    },
}

#[derive(Debug)]
pub struct Journal {
    out: BufWriter<File>,
}

fn storage(e: impl std::fmt::Display) -> ServerError {
    ServerError::Storage(e.to_string())
}

impl Journal {
    pub fn append_to(path: &Path) -> Result<Self, ServerError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(storage)?;
        Ok(Journal {
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, entry: &JournalEntry) -> Result<(), ServerError> {
        serde_json::to_writer(&mut self.out, entry).map_err(storage)?;
        self.out.write_all(b"\n").map_err(storage)?;
        self.out.flush().map_err(storage)
    }
}

/// Re-applies every entry in `path` to `server`. A missing file is an empty
/// journal.
pub fn replay(server: &mut HealthServer, path: &Path) -> Result<usize, ServerError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(storage(e)),
    };
    let mut applied = 0;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(storage)?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: JournalEntry = serde_json::from_str(&line)
            .map_err(|e| storage(format!("journal line {}: {e}", idx + 1)))?;
        apply(server, entry).map_err(|e| storage(format!("journal line {}: {e}", idx + 1)))?;
        applied += 1;
    }
    Ok(applied)
}

fn apply(server: &mut HealthServer, entry: JournalEntry) -> Result<(), ServerError> {
    match entry {
        JournalEntry::Ingest { frame } => {
            if let Some(reason) = server.ingest_bulk(&frame, 0).rejected {
                return Err(ServerError::Validation(reason));
            }
        }
        JournalEntry::SetThreshold {
            doctor,
            subject,
            channel,
            low,
            high,
            now,
        } => {
            server.set_threshold(&doctor, &subject, channel, low, high, now)?;
        }
        JournalEntry::Advice {
            doctor,
            subject,
            text,
            now,
        } => {
            server.send_advice(&doctor, &subject, &text, now)?;
        }
        JournalEntry::Grant { subject, grantee } => {
            server.grant(&subject, &subject, &grantee)?;
        }
        JournalEntry::Revoke { subject, grantee } => {
            server.revoke(&subject, &subject, &grantee)?;
        }
        JournalEntry::CreateThread {
            creator,
            participants,
            now,
        } => {
            server.create_thread(&creator, &participants, now)?;
        }
        JournalEntry::Post {
            author,
            thread_id,
            text,
            now,
        } => {
            server.post_message(&author, thread_id, &text, now)?;
        }
        JournalEntry::AddKnowledge {
            specialist,
            keywords,
            area,
            body,
            now,
        } => {
            server.add_knowledge(&specialist, &keywords, &area, &body, now)?;
        }
        JournalEntry::Evaluate {
            specialist,
            entry_id,
            rating,
        } => {
            server.evaluate_knowledge(&specialist, entry_id, rating)?;
        }
        JournalEntry::Feedback {
            user,
            entry_id,
            verdict,
        } => {
            server.record_feedback(&user, entry_id, verdict)?;
        }
    }
    Ok(())
}
