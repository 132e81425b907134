use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use icare_core::api::{
    Band, ErrorBody, EvaluateBody, FeedbackBody, GrantBody, Health, Me, NewKnowledge, NewThread, TextBody,
};
use icare_core::emergency::{DispatchFilter, DispatchRecord};
use icare_core::protocol::{EventRecord, Threshold, Timestamp, VitalChannel};
use icare_core::server::{
    AdviceRecord, ConfidenceLevel, Grant, KnowledgeSummary, MessageThread, Role, ServerError,
    SubjectHistory, SubjectView,
};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;

use crate::state::{AppState, LiveEvent};

type AppStateRef = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: kind.into(),
                message: message.into(),
            },
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }
}

impl From<ServerError> for ApiError {
    fn from(e: ServerError) -> Self {
        let (status, kind) = match &e {
            ServerError::Unauthenticated => (StatusCode::UNAUTHORIZED, "unauthenticated"),
            ServerError::Forbidden(_) => (StatusCode::FORBIDDEN, "forbidden"),
            ServerError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServerError::Validation(_) => (StatusCode::BAD_REQUEST, "validation"),
            ServerError::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        ApiError::new(status, kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// JSON body whose rejections use the API error shape.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| Body(v))
            .map_err(|e: JsonRejection| ApiError::bad_request(e.body_text()))
    }
}

/// The authenticated user. The token comes from `Authorization: Bearer`, or
/// from `?token=` since browsers cannot set headers on a WebSocket.
#[derive(Debug, Clone)]
pub struct Caller {
    pub user_id: String,
    pub role: Role,
}

fn query_token(query: Option<&str>) -> Option<String> {
    query?
        .split('&')
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == "token")
        .map(|(_, v)| v.to_string())
}

impl FromRequestParts<AppStateRef> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppStateRef) -> Result<Self, ApiError> {
        let header_token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(|t| t.trim().to_string());
        let token = header_token
            .or_else(|| query_token(parts.uri.query()))
            .ok_or(ServerError::Unauthenticated)?;
        let server = state.server();
        let user = server.authenticate(&token)?;
        Ok(Caller {
            user_id: user.user_id.clone(),
            role: user.role,
        })
    }
}

pub fn router(state: AppStateRef) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/me", get(me))
        .route("/subjects/{id}/vitals", get(vitals))
        .route("/subjects/{id}/alarms", get(alarms))
        .route("/subjects/{id}/history", get(history))
        .route("/subjects/{id}/thresholds", get(thresholds))
        .route("/subjects/{id}/thresholds/{channel}", put(set_threshold))
        .route("/subjects/{id}/advice", post(advice))
        .route("/subjects/{id}/grants", get(grants).post(grant))
        .route("/subjects/{id}/grants/{grantee}", delete(revoke))
        .route("/subjects/{id}/live", get(live))
        .route("/knowledge", get(query_knowledge).post(add_knowledge))
        .route("/knowledge/{id}", get(knowledge_entry))
        .route("/knowledge/{id}/evaluate", post(evaluate))
        .route("/knowledge/{id}/feedback", post(feedback))
        .route("/threads", get(list_threads).post(create_thread))
        .route("/threads/{id}", get(read_thread))
        .route("/threads/{id}/messages", post(post_message))
        .route("/dispatches", get(dispatches))
        .with_state(state)
}

async fn health(State(state): State<AppStateRef>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        now: state.now(),
    })
}

async fn me(State(state): State<AppStateRef>, caller: Caller) -> ApiResult<Me> {
    let server = state.server();
    let user = server
        .user(&caller.user_id)
        .ok_or(ServerError::Unauthenticated)?;
    Ok(Json(Me {
        user_id: user.user_id.clone(),
        role: user.role,
        display_name: user.display_name.clone(),
        subjects: server.visible_subjects(&caller.user_id),
    }))
}

#[derive(Deserialize)]
struct SinceQuery {
    since: Option<Timestamp>,
}

async fn vitals(
    State(state): State<AppStateRef>,
    caller: Caller,
    Path(id): Path<String>,
    Query(q): Query<SinceQuery>,
) -> ApiResult<SubjectView> {
    Ok(Json(state.server().view_records(&caller.user_id, &id, q.since)?))
}

async fn alarms(
    State(state): State<AppStateRef>,
    caller: Caller,
    Path(id): Path<String>,
) -> ApiResult<Vec<EventRecord>> {
    Ok(Json(state.server().alarm_history(&caller.user_id, &id)?))
}

async fn history(
    State(state): State<AppStateRef>,
    caller: Caller,
    Path(id): Path<String>,
) -> ApiResult<SubjectHistory> {
    Ok(Json(state.server().history(&caller.user_id, &id)?))
}

async fn thresholds(
    State(state): State<AppStateRef>,
    caller: Caller,
    Path(id): Path<String>,
) -> ApiResult<Vec<Threshold>> {
    let server = state.server();
    if !server.can_view(&caller.user_id, &id) {
        return Err(ServerError::Forbidden(format!("{} may not view {id}", caller.user_id)).into());
    }
    Ok(Json(server.thresholds(&id)))
}

async fn set_threshold(
    State(state): State<AppStateRef>,
    caller: Caller,
    Path((id, channel)): Path<(String, String)>,
    Body(band): Body<Band>,
) -> ApiResult<Threshold> {
    let channel: VitalChannel = channel.parse().map_err(|e: icare_core::protocol::UnknownChannel| {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string())
    })?;
    let stored = {
        let mut server = state.server();
        server.set_threshold(&caller.user_id, &id, channel, band.low, band.high, state.now())?;
        server
            .thresholds(&id)
            .into_iter()
            .find(|t| t.channel == channel)
            .expect("threshold just stored")
    };
    state.flush_outbox();
    state.publish(&id, LiveEvent::Threshold(stored.clone()));
    Ok(Json(stored))
}

async fn advice(
    State(state): State<AppStateRef>,
    caller: Caller,
    Path(id): Path<String>,
    Body(body): Body<TextBody>,
) -> Result<(StatusCode, Json<AdviceRecord>), ApiError> {
    let now = state.now();
    state.server().send_advice(&caller.user_id, &id, &body.text, now)?;
    let record = AdviceRecord {
        ts: now,
        doctor_id: caller.user_id,
        text: body.text,
    };
    state.flush_outbox();
    state.publish(&id, LiveEvent::Advice(record.clone()));
    Ok((StatusCode::CREATED, Json(record)))
}

async fn grants(
    State(state): State<AppStateRef>,
    caller: Caller,
    Path(id): Path<String>,
) -> ApiResult<Vec<Grant>> {
    if caller.user_id != id {
        return Err(ServerError::Forbidden("only the subject can list grants".into()).into());
    }
    Ok(Json(state.server().grants_of(&id)))
}

async fn grant(
    State(state): State<AppStateRef>,
    caller: Caller,
    Path(id): Path<String>,
    Body(body): Body<GrantBody>,
) -> Result<(StatusCode, Json<Grant>), ApiError> {
    let g = state.server().grant(&caller.user_id, &id, &body.grantee)?;
    Ok((StatusCode::CREATED, Json(g)))
}

async fn revoke(
    State(state): State<AppStateRef>,
    caller: Caller,
    Path((id, grantee)): Path<(String, String)>,
) -> Result<StatusCode, ApiError> {
    if state.server().revoke(&caller.user_id, &id, &grantee)? {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ServerError::NotFound(format!("grant of {id} to {grantee}")).into())
    }
}

#[derive(Deserialize)]
struct KnowledgeQuery {
    keyword: String,
    area: Option<String>,
    min_level: Option<ConfidenceLevel>,
}

async fn query_knowledge(
    State(state): State<AppStateRef>,
    _caller: Caller,
    Query(q): Query<KnowledgeQuery>,
) -> ApiResult<Vec<KnowledgeSummary>> {
    let server = state.server();
    let found = server.query_knowledge(
        &q.keyword,
        q.area.as_deref(),
        q.min_level.unwrap_or(ConfidenceLevel::General),
    )?;
    Ok(Json(found.into_iter().map(|e| e.summary()).collect()))
}

async fn add_knowledge(
    State(state): State<AppStateRef>,
    caller: Caller,
    Body(body): Body<NewKnowledge>,
) -> Result<(StatusCode, Json<KnowledgeSummary>), ApiError> {
    let now = state.now();
    let mut server = state.server();
    let entry = server.add_knowledge(&caller.user_id, &body.keywords, &body.area, &body.body, now)?;
    Ok((StatusCode::CREATED, Json(entry.summary())))
}

async fn knowledge_entry(
    State(state): State<AppStateRef>,
    _caller: Caller,
    Path(id): Path<u64>,
) -> ApiResult<KnowledgeSummary> {
    let server = state.server();
    let entry = server
        .knowledge_entry(id)
        .ok_or_else(|| ServerError::NotFound(format!("knowledge entry {id}")))?;
    Ok(Json(entry.summary()))
}

async fn evaluate(
    State(state): State<AppStateRef>,
    caller: Caller,
    Path(id): Path<u64>,
    Body(body): Body<EvaluateBody>,
) -> ApiResult<KnowledgeSummary> {
    let mut server = state.server();
    Ok(Json(server.evaluate_knowledge(&caller.user_id, id, body.rating)?.summary()))
}

async fn feedback(
    State(state): State<AppStateRef>,
    caller: Caller,
    Path(id): Path<u64>,
    Body(body): Body<FeedbackBody>,
) -> ApiResult<KnowledgeSummary> {
    let mut server = state.server();
    Ok(Json(server.record_feedback(&caller.user_id, id, body.verdict)?.summary()))
}

async fn create_thread(
    State(state): State<AppStateRef>,
    caller: Caller,
    Body(body): Body<NewThread>,
) -> Result<(StatusCode, Json<MessageThread>), ApiError> {
    let now = state.now();
    let mut server = state.server();
    let thread = server.create_thread(&caller.user_id, &body.participants, now)?;
    Ok((StatusCode::CREATED, Json(thread.clone())))
}

async fn list_threads(State(state): State<AppStateRef>, caller: Caller) -> ApiResult<Vec<MessageThread>> {
    let server = state.server();
    Ok(Json(server.threads_for(&caller.user_id)?.into_iter().cloned().collect()))
}

async fn read_thread(
    State(state): State<AppStateRef>,
    caller: Caller,
    Path(id): Path<u64>,
) -> ApiResult<MessageThread> {
    Ok(Json(state.server().read_thread(&caller.user_id, id)?.clone()))
}

async fn post_message(
    State(state): State<AppStateRef>,
    caller: Caller,
    Path(id): Path<u64>,
    Body(body): Body<TextBody>,
) -> ApiResult<MessageThread> {
    let now = state.now();
    let mut server = state.server();
    Ok(Json(server.post_message(&caller.user_id, id, &body.text, now)?.clone()))
}

/// Dispatches for subjects the caller may view, newest first.
async fn dispatches(
    State(state): State<AppStateRef>,
    caller: Caller,
    Query(filter): Query<DispatchFilter>,
) -> ApiResult<Vec<DispatchRecord>> {
    let all = state.emergency().list_dispatches(&filter);
    let server = state.server();
    Ok(Json(
        all.into_iter()
            .filter(|d| server.can_view(&caller.user_id, &d.elder_id))
            .collect(),
    ))
}

async fn live(
    State(state): State<AppStateRef>,
    caller: Caller,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    if !state.server().can_view(&caller.user_id, &id) {
        return Err(ServerError::Forbidden(format!("{} may not view {id}", caller.user_id)).into());
    }
    // Subscribe before the upgrade so nothing published in between is lost.
    let rx = state.live.subscribe();
    Ok(ws.on_upgrade(move |socket| push_live(socket, rx, id)))
}

async fn push_live(
    mut socket: WebSocket,
    mut rx: tokio::sync::broadcast::Receiver<crate::state::LiveMessage>,
    subject: String,
) {
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(m) if m.subject == subject => {
                    let text = serde_json::to_string(&m.event).expect("live event serializes");
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                Ok(_) => {}
                Err(RecvError::Lagged(n)) => {
                    tracing::warn!(subject, skipped = n, "live subscriber lagged");
                }
                Err(RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_from_query() {
        assert_eq!(query_token(Some("a=1&token=abc")), Some("abc".into()));
        assert_eq!(query_token(Some("a=1")), None);
        assert_eq!(query_token(None), None);
    }

    #[test]
    fn server_errors_map_to_statuses() {
        let cases = [
            (ServerError::Unauthenticated, 401),
            (ServerError::Forbidden("x".into()), 403),
            (ServerError::NotFound("x".into()), 404),
            (ServerError::Validation("x".into()), 400),
            (ServerError::Storage("x".into()), 500),
        ];
        for (e, code) in cases {
            assert_eq!(ApiError::from(e).status.as_u16(), code);
        }
    }
}
