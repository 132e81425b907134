//! Client for the icare service: typed calls for every HTTP endpoint, the
//! live WebSocket feed, and the three line/frame sockets used by gateways.

pub mod wire;

use futures::StreamExt;
use icare_core::api::{
    Band, ErrorBody, EvaluateBody, FeedbackBody, GrantBody, Health, LiveEvent, Me, NewKnowledge, NewThread,
    TextBody,
};
use icare_core::emergency::DispatchRecord;
use icare_core::protocol::{EventRecord, FrameError, Threshold, Timestamp, VitalChannel};
use icare_core::server::{
    AdviceRecord, ConfidenceLevel, Grant, KnowledgeSummary, MessageThread, Rating, SubjectHistory, SubjectView,
    Verdict,
};
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub use wire::{AlarmSender, BulkSender, BusReceiver};

#[derive(Debug, Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{status}: {}", body.message)]
    Api { status: u16, body: ErrorBody },
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("websocket: {0}")]
    WebSocket(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("protocol: {0}")]
    Protocol(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
    token: Option<String>,
}

impl Client {
    pub fn new(base_url: impl Into<String>, token: Option<String>) -> Self {
        Client {
            http: reqwest::Client::new(),
            base: base_url.into().trim_end_matches('/').to_string(),
            token,
        }
    }

    /// Same service, another user.
    pub fn as_user(&self, token: impl Into<String>) -> Self {
        Client {
            http: self.http.clone(),
            base: self.base.clone(),
            token: Some(token.into()),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn call<B: Serialize, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        query: &[(&str, String)],
        body: Option<&B>,
    ) -> Result<T> {
        let resp = self.raw(method, path, query, body).await?;
        Ok(resp.json().await?)
    }

    async fn raw<B: Serialize>(
        &self,
        method: Method,
        path: &str,
        query: &[(&str, String)],
        body: Option<&B>,
    ) -> Result<reqwest::Response> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if !query.is_empty() {
            req = req.query(query);
        }
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await?;
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            error: status.canonical_reason().unwrap_or("error").to_lowercase(),
            message: text,
        });
        Err(ClientError::Api {
            status: status.as_u16(),
            body,
        })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> Result<T> {
        self.call::<(), T>(Method::GET, path, query, None).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.call(Method::POST, path, &[], Some(body)).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/health", &[]).await
    }

    pub async fn me(&self) -> Result<Me> {
        self.get("/me", &[]).await
    }

    pub async fn vitals(&self, subject: &str, since: Option<Timestamp>) -> Result<SubjectView> {
        let query: Vec<_> = since.map(|s| ("since", s.to_string())).into_iter().collect();
        self.get(&format!("/subjects/{subject}/vitals"), &query).await
    }

    pub async fn alarms(&self, subject: &str) -> Result<Vec<EventRecord>> {
        self.get(&format!("/subjects/{subject}/alarms"), &[]).await
    }

    pub async fn history(&self, subject: &str) -> Result<SubjectHistory> {
        self.get(&format!("/subjects/{subject}/history"), &[]).await
    }

    pub async fn thresholds(&self, subject: &str) -> Result<Vec<Threshold>> {
        self.get(&format!("/subjects/{subject}/thresholds"), &[]).await
    }

    pub async fn set_threshold(&self, subject: &str, channel: VitalChannel, low: f64, high: f64) -> Result<Threshold> {
        self.call(
            Method::PUT,
            &format!("/subjects/{subject}/thresholds/{channel}"),
            &[],
            Some(&Band { low, high }),
        )
        .await
    }

    pub async fn send_advice(&self, subject: &str, text: &str) -> Result<AdviceRecord> {
        self.post(&format!("/subjects/{subject}/advice"), &TextBody { text: text.into() })
            .await
    }

    pub async fn grants(&self, subject: &str) -> Result<Vec<Grant>> {
        self.get(&format!("/subjects/{subject}/grants"), &[]).await
    }

    pub async fn grant(&self, subject: &str, grantee: &str) -> Result<Grant> {
        self.post(
            &format!("/subjects/{subject}/grants"),
            &GrantBody {
                grantee: grantee.into(),
            },
        )
        .await
    }

    pub async fn revoke(&self, subject: &str, grantee: &str) -> Result<()> {
        let resp = self
            .raw::<()>(Method::DELETE, &format!("/subjects/{subject}/grants/{grantee}"), &[], None)
            .await?;
        debug_assert_eq!(resp.status(), StatusCode::NO_CONTENT);
        Ok(())
    }

    pub async fn query_knowledge(
        &self,
        keyword: &str,
        area: Option<&str>,
        min_level: Option<ConfidenceLevel>,
    ) -> Result<Vec<KnowledgeSummary>> {
        let mut query = vec![("keyword", keyword.to_string())];
        if let Some(a) = area {
            query.push(("area", a.to_string()));
        }
        if let Some(l) = min_level {
            query.push(("min_level", l.as_str().to_string()));
        }
        self.get("/knowledge", &query).await
    }

    pub async fn add_knowledge(&self, keywords: &[&str], area: &str, body: &str) -> Result<KnowledgeSummary> {
        let entry = NewKnowledge {
            keywords: keywords.iter().map(|k| k.to_string()).collect(),
            area: area.into(),
            body: body.into(),
        };
        self.post("/knowledge", &entry).await
    }

    pub async fn knowledge_entry(&self, id: u64) -> Result<KnowledgeSummary> {
        self.get(&format!("/knowledge/{id}"), &[]).await
    }

    pub async fn evaluate(&self, id: u64, rating: Rating) -> Result<KnowledgeSummary> {
        self.post(&format!("/knowledge/{id}/evaluate"), &EvaluateBody { rating })
            .await
    }

    pub async fn feedback(&self, id: u64, verdict: Verdict) -> Result<KnowledgeSummary> {
        self.post(&format!("/knowledge/{id}/feedback"), &FeedbackBody { verdict })
            .await
    }

    pub async fn create_thread(&self, participants: &[&str]) -> Result<MessageThread> {
        let body = NewThread {
            participants: participants.iter().map(|p| p.to_string()).collect(),
        };
        self.post("/threads", &body).await
    }

    pub async fn threads(&self) -> Result<Vec<MessageThread>> {
        self.get("/threads", &[]).await
    }

    pub async fn thread(&self, id: u64) -> Result<MessageThread> {
        self.get(&format!("/threads/{id}"), &[]).await
    }

    pub async fn post_message(&self, id: u64, text: &str) -> Result<MessageThread> {
        self.post(&format!("/threads/{id}/messages"), &TextBody { text: text.into() })
            .await
    }

    pub async fn dispatches(&self, elder_id: Option<&str>) -> Result<Vec<DispatchRecord>> {
        let query: Vec<_> = elder_id.map(|e| ("elder_id", e.to_string())).into_iter().collect();
        self.get("/dispatches", &query).await
    }

    /// Opens the live feed of `subject`. Authorization failures surface as
    /// [`ClientError::Api`] with the HTTP status of the refused upgrade.
    pub async fn live(&self, subject: &str) -> Result<LiveFeed> {
        let ws_base = self
            .base
            .strip_prefix("http")
            .map(|rest| format!("ws{rest}"))
            .ok_or_else(|| ClientError::Protocol(format!("not an http url: {}", self.base)))?;
        let mut url = format!("{ws_base}/subjects/{subject}/live");
        if let Some(t) = &self.token {
            url.push_str(&format!("?token={t}"));
        }
        match tokio_tungstenite::connect_async(url.as_str()).await {
            Ok((stream, _)) => Ok(LiveFeed { stream }),
            Err(tokio_tungstenite::tungstenite::Error::Http(resp)) => {
                let status = resp.status().as_u16();
                let body = resp
                    .body()
                    .as_ref()
                    .and_then(|b| serde_json::from_slice(b).ok())
                    .unwrap_or(ErrorBody {
                        error: "websocket".into(),
                        message: format!("upgrade refused with {status}"),
                    });
                Err(ClientError::Api { status, body })
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// Events pushed for one subject.
pub struct LiveFeed {
    stream: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

impl LiveFeed {
    /// Next event, or `None` once the service closes the feed.
    pub async fn next(&mut self) -> Option<Result<LiveEvent>> {
        loop {
            match self.stream.next().await? {
                Ok(Message::Text(t)) => return Some(serde_json::from_str(&t).map_err(Into::into)),
                Ok(Message::Close(_)) => return None,
                Ok(_) => continue,
                Err(e) => return Some(Err(e.into())),
            }
        }
    }

    pub async fn close(mut self) -> Result<()> {
        self.stream.close(None).await?;
        Ok(())
    }
}
