//! Medical knowledge base with specialist-rated confidence.
//!
//! A score is `clamp(mean(ratings) + feedback, 0, 1)` where ratings are in
//! {0, 0.5, 1} (mean 0.5 when unrated) and each user verdict moves the
//! feedback term by 0.05. Scores are kept as exact fractions so the band
//! edges at 0.3 and 0.7 are decided without rounding.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use crate::protocol::Timestamp;

/// Feedback step, as a fraction of 1: 1/20 = 0.05.
const FEEDBACK_STEPS_PER_UNIT: i64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceLevel {
    Weak,
    General,
    Credit,
}

impl ConfidenceLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            ConfidenceLevel::Weak => "weak",
            ConfidenceLevel::General => "general",
            ConfidenceLevel::Credit => "credit",
        }
    }

    /// Band function over a plain score.
    pub fn from_score(score: f64) -> Self {
        if score >= 0.7 {
            ConfidenceLevel::Credit
        } else if score >= 0.3 {
            ConfidenceLevel::General
        } else {
            ConfidenceLevel::Weak
        }
    }
}

impl fmt::Display for ConfidenceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConfidenceLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "credit" => Ok(ConfidenceLevel::Credit),
            "general" => Ok(ConfidenceLevel::General),
            "weak" => Ok(ConfidenceLevel::Weak),
            other => Err(format!("unknown confidence level {other:?}")),
        }
    }
}

/// A specialist's rating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rating {
    Zero,
    Half,
    One,
}

impl Rating {
    fn halves(self) -> i64 {
        match self {
            Rating::Zero => 0,
            Rating::Half => 1,
            Rating::One => 2,
        }
    }

    pub fn value(self) -> f64 {
        self.halves() as f64 / 2.0
    }
}

impl TryFrom<f64> for Rating {
    type Error = String;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        if v == 0.0 {
            Ok(Rating::Zero)
        } else if v == 0.5 {
            Ok(Rating::Half)
        } else if v == 1.0 {
            Ok(Rating::One)
        } else {
            Err(format!("rating must be 0, 0.5 or 1, got {v}"))
        }
    }
}

impl Serialize for Rating {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for Rating {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Rating::try_from(f64::deserialize(deserializer)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Helpful,
    Unhelpful,
}

/// Exact score `num / den`, already clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct Confidence {
    num: i64,
    den: i64,
}

impl Confidence {
    fn compute(evaluations: &BTreeMap<String, Rating>, feedback_steps: i64) -> Self {
        let (halves, n) = if evaluations.is_empty() {
            (1, 1)
        } else {
            (
                evaluations.values().map(|r| r.halves()).sum::<i64>(),
                evaluations.len() as i64,
            )
        };
        // halves/(2n) + steps/20 over the common denominator 20n.
        let den = FEEDBACK_STEPS_PER_UNIT * n;
        let num = halves * (FEEDBACK_STEPS_PER_UNIT / 2) + feedback_steps * n;
        Confidence {
            num: num.clamp(0, den),
            den,
        }
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn level(&self) -> ConfidenceLevel {
        if 10 * self.num >= 7 * self.den {
            ConfidenceLevel::Credit
        } else if 10 * self.num >= 3 * self.den {
            ConfidenceLevel::General
        } else {
            ConfidenceLevel::Weak
        }
    }
}

impl PartialEq for Confidence {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Confidence {}

impl PartialOrd for Confidence {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Confidence {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as i128 * other.den as i128).cmp(&(other.num as i128 * self.den as i128))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeEntry {
    pub entry_id: u64,
    pub keywords: Vec<String>,
    pub area: String,
    pub body: String,
    pub author: String,
    pub created_at: Timestamp,
    pub evaluations: BTreeMap<String, Rating>,
    /// Net helpful minus unhelpful verdicts.
    pub feedback_steps: i64,
}

impl KnowledgeEntry {
    pub fn confidence(&self) -> Confidence {
        Confidence::compute(&self.evaluations, self.feedback_steps)
    }

    pub fn score(&self) -> f64 {
        self.confidence().value()
    }

    pub fn level(&self) -> ConfidenceLevel {
        self.confidence().level()
    }

    pub fn feedback_delta(&self) -> f64 {
        self.feedback_steps as f64 / FEEDBACK_STEPS_PER_UNIT as f64
    }

    pub fn matches(&self, keyword: &str, area: Option<&str>) -> bool {
        let keyword = keyword.to_lowercase();
        self.keywords.iter().any(|k| k.to_lowercase() == keyword)
            && area.is_none_or(|a| a.is_empty() || a.to_lowercase() == self.area.to_lowercase())
    }
}

/// Wire form of an entry, with its derived score and level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeSummary {
    pub entry_id: u64,
    pub keywords: Vec<String>,
    pub area: String,
    pub body: String,
    pub author: String,
    pub created_at: Timestamp,
    pub score: f64,
    pub level: ConfidenceLevel,
    pub evaluations: BTreeMap<String, Rating>,
    pub feedback_delta: f64,
}

impl KnowledgeEntry {
    pub fn summary(&self) -> KnowledgeSummary {
        KnowledgeSummary {
            entry_id: self.entry_id,
            keywords: self.keywords.clone(),
            area: self.area.clone(),
            body: self.body.clone(),
            author: self.author.clone(),
            created_at: self.created_at,
            score: self.score(),
            level: self.level(),
            evaluations: self.evaluations.clone(),
            feedback_delta: self.feedback_delta(),
        }
    }
}

impl Serialize for KnowledgeEntry {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.summary().serialize(serializer)
    }
}

#[derive(Debug, Default, Clone)]
pub struct KnowledgeBase {
    entries: BTreeMap<u64, KnowledgeEntry>,
    next_id: u64,
}

impl KnowledgeBase {
    pub fn insert(
        &mut self,
        author: &str,
        keywords: Vec<String>,
        area: String,
        body: String,
        now: Timestamp,
    ) -> &KnowledgeEntry {
        self.next_id += 1;
        let id = self.next_id;
        self.entries.insert(
            id,
            KnowledgeEntry {
                entry_id: id,
                keywords,
                area,
                body,
                author: author.to_string(),
                created_at: now,
                evaluations: BTreeMap::new(),
                feedback_steps: 0,
            },
        );
        &self.entries[&id]
    }

    pub fn get(&self, id: u64) -> Option<&KnowledgeEntry> {
        self.entries.get(&id)
    }

    pub fn get_mut(&mut self, id: u64) -> Option<&mut KnowledgeEntry> {
        self.entries.get_mut(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Matching entries at or above `min_level`, best first; equal scores
    /// list the newest entry first. Weak entries are never returned.
    pub fn query(&self, keyword: &str, area: Option<&str>, min_level: ConfidenceLevel) -> Vec<&KnowledgeEntry> {
        let floor = min_level.max(ConfidenceLevel::General);
        let mut hits: Vec<(&KnowledgeEntry, Confidence)> = self
            .entries
            .values()
            .filter(|e| e.matches(keyword, area))
            .map(|e| (e, e.confidence()))
            .filter(|(_, c)| c.level() >= floor)
            .collect();
        hits.sort_by(|(a, ca), (b, cb)| cb.cmp(ca).then(b.entry_id.cmp(&a.entry_id)));
        hits.into_iter().map(|(e, _)| e).collect()
    }
}
