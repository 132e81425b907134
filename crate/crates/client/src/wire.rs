//! Socket clients for the bulk ingest, SMS intake and SMS bus listeners.

use std::net::SocketAddr;

use bytes::Bytes;
use futures::{SinkExt, StreamExt};
use icare_core::protocol::{BulkAck, BulkFrame, MAX_FRAME_BYTES};
use tokio::net::TcpStream;
use tokio_util::codec::{Framed, LengthDelimitedCodec, LinesCodec, LinesCodecError};

use crate::{ClientError, Result};

const MAX_LINE_BYTES: usize = 4096;

fn lines_err(e: LinesCodecError) -> ClientError {
    match e {
        LinesCodecError::Io(e) => ClientError::Io(e),
        other => ClientError::Protocol(other.to_string()),
    }
}

fn closed() -> ClientError {
    ClientError::Protocol("connection closed".into())
}

/// Sends bulk frames and waits for each acknowledgement.
pub struct BulkSender {
    framed: Framed<TcpStream, LengthDelimitedCodec>,
}

impl BulkSender {
    pub async fn connect(addr: SocketAddr) -> Result<Self> {
        let codec = LengthDelimitedCodec::builder()
            .length_field_length(4)
            .big_endian()
            .max_frame_length(MAX_FRAME_BYTES)
            .new_codec();
        Ok(BulkSender {
            framed: Framed::new(TcpStream::connect(addr).await?, codec),
        })
    }

    pub async fn send(&mut self, frame: &BulkFrame) -> Result<BulkAck> {
        self.send_payload(serde_json::to_vec(frame)?).await
    }

    /// Sends raw payload bytes, for exercising malformed frames.
    pub async fn send_payload(&mut self, payload: Vec<u8>) -> Result<BulkAck> {
        self.framed.send(Bytes::from(payload)).await?;
        let reply = self.framed.next().await.ok_or_else(closed)??;
        Ok(serde_json::from_slice(&reply)?)
    }
}

/// Sends ALARM lines to the emergency centre.
pub struct AlarmSender {
    framed: Framed<TcpStream, LinesCodec>,
}

impl AlarmSender {
    pub async fn connect(addr: SocketAddr) -> Result<Self> {
        Ok(AlarmSender {
            framed: Framed::new(
                TcpStream::connect(addr).await?,
                LinesCodec::new_with_max_length(MAX_LINE_BYTES),
            ),
        })
    }

    /// Returns the centre's reply: `OK <dispatch_id>`, `DUP` or `ERR <reason>`.
    pub async fn send(&mut self, line: &str) -> Result<String> {
        self.framed.send(line.trim_end_matches('\n')).await.map_err(lines_err)?;
        self.framed.next().await.ok_or_else(closed)?.map_err(lines_err)
    }
}

/// A gateway's subscription to THRESH/ADVICE lines.
pub struct BusReceiver {
    framed: Framed<TcpStream, LinesCodec>,
}

impl BusReceiver {
    pub async fn connect(addr: SocketAddr, elder_id: &str) -> Result<Self> {
        let mut framed = Framed::new(
            TcpStream::connect(addr).await?,
            LinesCodec::new_with_max_length(MAX_LINE_BYTES),
        );
        framed.send(format!("HELLO {elder_id}")).await.map_err(lines_err)?;
        match framed.next().await.ok_or_else(closed)?.map_err(lines_err)? {
            ok if ok == "OK" => Ok(BusReceiver { framed }),
            other => Err(ClientError::Protocol(other)),
        }
    }

    /// Next line for this gateway, or `None` when the bus hangs up.
    pub async fn next_line(&mut self) -> Option<Result<String>> {
        self.framed.next().await.map(|r| r.map_err(lines_err))
    }
}
