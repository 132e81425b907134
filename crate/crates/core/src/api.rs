//! JSON bodies of the HTTP and WebSocket API, shared by the service and its
//! clients.

use serde::{Deserialize, Serialize};

use crate::emergency::DispatchRecord;
use crate::protocol::{EventRecord, Threshold, Timestamp, VitalRecord};
use crate::server::{AdviceRecord, Rating, Role, Verdict};

/// Every non-2xx response carries this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub now: Timestamp,
}

/// Session context: who the caller is and whom they may view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Me {
    pub user_id: String,
    pub role: Role,
    pub display_name: String,
    pub subjects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextBody {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrantBody {
    pub grantee: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewKnowledge {
    pub keywords: Vec<String>,
    pub area: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateBody {
    pub rating: Rating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackBody {
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewThread {
    pub participants: Vec<String>,
}

/// One message on `/subjects/{id}/live`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum LiveEvent {
    Vital(VitalRecord),
    Event(EventRecord),
    Threshold(Threshold),
    Advice(AdviceRecord),
    Dispatch(DispatchRecord),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::VitalChannel;

    #[test]
    fn live_event_is_tagged() {
        let t = Threshold::new(VitalChannel::EcgHr, 50.0, 100.0, "D01", 7).unwrap();
        let json = serde_json::to_value(LiveEvent::Threshold(t.clone())).unwrap();
        assert_eq!(json["type"], "threshold");
        assert_eq!(json["data"]["channel"], "ECG_HR");
        let back: LiveEvent = serde_json::from_value(json).unwrap();
        assert_eq!(back, LiveEvent::Threshold(t));
    }

    #[test]
    fn rating_body_is_numeric() {
        let b: EvaluateBody = serde_json::from_str(r#"{"rating": 0.5}"#).unwrap();
        assert_eq!(b.rating, Rating::Half);
        assert!(serde_json::from_str::<EvaluateBody>(r#"{"rating": 0.7}"#).is_err());
    }
}
