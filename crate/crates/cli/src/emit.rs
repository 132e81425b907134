//! Sensor output: a scenario's samples as JSON lines, either all at once or
//! paced by a clock over TCP to a gateway's sensor port.

use std::io::Write;
use std::net::SocketAddr;

use icare_core::protocol::VitalRecord;
use icare_core::sensors::{sample_stream, Scenario};
use icare_service::{sleep_until, Clock};
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;

pub fn samples(scenario: &Scenario) -> Vec<VitalRecord> {
    sample_stream(&scenario.sensors, &scenario.gateway.elder_id, scenario.horizon_s)
}

pub fn write_lines(records: &[VitalRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Sends each record when `clock` reaches its timestamp. Returns how many
/// were sent.
pub async fn stream_to(addr: SocketAddr, records: &[VitalRecord], clock: &dyn Clock) -> std::io::Result<usize> {
    let mut conn = TcpStream::connect(addr).await?;
    for r in records {
        sleep_until(clock, r.ts).await;
        let mut line = serde_json::to_vec(r).expect("record serializes");
        line.push(b'\n');
        conn.write_all(&line).await?;
    }
    conn.shutdown().await?;
    Ok(records.len())
}
