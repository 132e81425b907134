use std::sync::Arc;

use bytes::Bytes;
use futures::{SinkExt, StreamExt};
use icare_core::emergency::{Intake, IntakeError};
use icare_core::protocol::MAX_FRAME_BYTES;
use tokio::net::{TcpListener, TcpStream};
use tokio_util::codec::{Framed, LengthDelimitedCodec, LinesCodec};
use tokio_util::sync::CancellationToken;

use crate::state::{AppState, LiveEvent};

/// Longest accepted SMS line.
pub const MAX_LINE_BYTES: usize = 4096;

pub fn bulk_codec() -> LengthDelimitedCodec {
    LengthDelimitedCodec::builder()
        .length_field_length(4)
        .big_endian()
        .max_frame_length(MAX_FRAME_BYTES)
        .new_codec()
}

/// Accepts connections until cancelled, handing each to `handle`.
pub async fn serve<F, Fut>(listener: TcpListener, state: Arc<AppState>, cancel: CancellationToken, handle: F)
where
    F: Fn(TcpStream, Arc<AppState>) -> Fut,
    Fut: std::future::Future<Output = ()> + Send + 'static,
{
    loop {
        tokio::select! {
            _ = cancel.cancelled() => return,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    tracing::debug!(%peer, "connection");
                    let conn = handle(stream, state.clone());
                    let cancel = cancel.clone();
                    tokio::spawn(async move {
                        tokio::select! {
                            _ = cancel.cancelled() => {}
                            _ = conn => {}
                        }
                    });
                }
                Err(e) => tracing::warn!("accept failed: {e}"),
            },
        }
    }
}

/// One gateway connection: bulk frames in, ack frames out.
pub async fn bulk_connection(stream: TcpStream, state: Arc<AppState>) {
    let mut framed = Framed::new(stream, bulk_codec());
    while let Some(frame) = framed.next().await {
        let payload = match frame {
            Ok(p) => p,
            Err(e) => {
                tracing::warn!("bulk connection closed: {e}");
                return;
            }
        };
        let outcome = state.server().ingest_payload(&payload, state.now());
        if let Some(reason) = &outcome.rejected {
            tracing::warn!(frame_id = outcome.ack.frame_id, "bulk frame rejected: {reason}");
        }
        for r in outcome.inserted_records {
            let subject = r.elder_id.clone();
            state.publish(&subject, LiveEvent::Vital(r));
        }
        for e in outcome.inserted_events {
            let subject = e.elder_id.clone();
            state.publish(&subject, LiveEvent::Event(e));
        }
        let ack = serde_json::to_vec(&outcome.ack).expect("ack serializes");
        if framed.send(Bytes::from(ack)).await.is_err() {
            return;
        }
    }
}

/// Reply sent for one intake line.
pub fn intake_reply(result: &Result<Intake, IntakeError>) -> String {
    match result {
        Ok(Intake::Dispatched(d)) => format!("OK {}", d.dispatch_id),
        Ok(Intake::Duplicate) => "DUP".to_string(),
        Err(e) => format!("ERR {e}"),
    }
}

/// ALARM lines in, one reply line out per alarm.
pub async fn intake_connection(stream: TcpStream, state: Arc<AppState>) {
    let mut framed = Framed::new(stream, LinesCodec::new_with_max_length(MAX_LINE_BYTES));
    while let Some(line) = framed.next().await {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                tracing::warn!("intake connection closed: {e}");
                return;
            }
        };
        let (result, audit) = {
            let mut ec = state.emergency();
            let result = ec.receive_alarm(&line, state.now());
            (result, ec.audit_log().last().cloned())
        };
        if let Some(a) = &audit {
            state.write_audit(a);
        }
        if let Ok(Intake::Dispatched(d)) = &result {
            tracing::info!(dispatch_id = d.dispatch_id, elder = %d.elder_id, "ambulance dispatched to {}", d.location);
            state.publish(&d.elder_id.clone(), LiveEvent::Dispatch(d.clone()));
        }
        if framed.send(intake_reply(&result)).await.is_err() {
            return;
        }
    }
}

/// A gateway says `HELLO <elder_id>`, then receives that elder's THRESH and
/// ADVICE lines, queued ones first.
pub async fn bus_connection(stream: TcpStream, state: Arc<AppState>) {
    let mut framed = Framed::new(stream, LinesCodec::new_with_max_length(MAX_LINE_BYTES));
    let elder = match framed.next().await {
        Some(Ok(line)) => match line.strip_prefix("HELLO ").map(str::trim) {
            Some(id) if !id.is_empty() => id.to_string(),
            _ => {
                let _ = framed.send("ERR expected HELLO <elder_id>").await;
                return;
            }
        },
        _ => return,
    };
    if framed.send("OK").await.is_err() {
        return;
    }
    let mut rx = state.bus.subscribe(&elder);
    loop {
        tokio::select! {
            line = rx.recv() => match line {
                Some(l) => {
                    if framed.send(l).await.is_err() {
                        return;
                    }
                }
                None => return,
            },
            incoming = framed.next() => match incoming {
                Some(Ok(_)) => {}
                _ => return,
            },
        }
    }
}
