//! Messages and records exchanged between the sensors, the gateway, the
//! health server and the emergency centre.
//!
//! Two encodings live here:
//!
//! * the short-message line grammar used on the SMS bus
//!   (`ALARM`, `THRESH` and `ADVICE`), one LF-terminated ASCII line each;
//! * bulk frames: a 4-byte big-endian length prefix followed by a UTF-8
//!   JSON payload, used for gateway-to-server synchronisation and the
//!   matching acknowledgement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Integer Unix seconds.
pub type Timestamp = i64;

/// Sensor id carried by alarms that were raised from the quick-alarm button.
pub const QUICK_SENSOR_ID: &str = "QUICK";

/// Upper bound on a bulk frame payload.
pub const MAX_FRAME_BYTES: usize = 16 * 1024 * 1024;

/// Length of the big-endian frame header.
pub const FRAME_HEADER_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VitalChannel {
    /// Heart rate derived from the ECG sensor, beats/min.
    #[serde(rename = "ECG_HR")]
    EcgHr,
    /// Systolic blood pressure, mmHg.
    #[serde(rename = "SYS_BP")]
    SysBp,
    /// Diastolic blood pressure, mmHg.
    #[serde(rename = "DIA_BP")]
    DiaBp,
    /// Accelerometer activity, counts/min.
    #[serde(rename = "ACTIVITY")]
    Activity,
}

impl VitalChannel {
    pub const ALL: [VitalChannel; 4] = [
        VitalChannel::EcgHr,
        VitalChannel::SysBp,
        VitalChannel::DiaBp,
        VitalChannel::Activity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VitalChannel::EcgHr => "ECG_HR",
            VitalChannel::SysBp => "SYS_BP",
            VitalChannel::DiaBp => "DIA_BP",
            VitalChannel::Activity => "ACTIVITY",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            VitalChannel::EcgHr => "beats/min",
            VitalChannel::SysBp | VitalChannel::DiaBp => "mmHg",
            VitalChannel::Activity => "counts/min",
        }
    }
}

impl fmt::Display for VitalChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown vital channel {0:?}")]
pub struct UnknownChannel(pub String);

impl FromStr for VitalChannel {
    type Err = UnknownChannel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VitalChannel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownChannel(s.to_string()))
    }
}

/// One timestamped reading on a channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalRecord {
    pub elder_id: String,
    pub sensor_id: String,
    pub channel: VitalChannel,
    pub seq: u64,
    pub ts: Timestamp,
    pub value: f64,
}

impl VitalRecord {
    /// Globally unique key of the record.
    pub fn key(&self) -> RecordKey {
        RecordKey {
            elder_id: self.elder_id.clone(),
            sensor_id: self.sensor_id.clone(),
            seq: self.seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub elder_id: String,
    pub sensor_id: String,
    pub seq: u64,
}

/// Inclusive `[low, high]` band for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub channel: VitalChannel,
    pub low: f64,
    pub high: f64,
    pub set_by: String,
    pub ts: Timestamp,
}

impl Threshold {
    pub fn new(
        channel: VitalChannel,
        low: f64,
        high: f64,
        set_by: impl Into<String>,
        ts: Timestamp,
    ) -> Result<Self, ThresholdError> {
        if !low.is_finite() || !high.is_finite() {
            return Err(ThresholdError::NonFinite);
        }
        if low > high {
            return Err(ThresholdError::LowAboveHigh { low, high });
        }
        Ok(Threshold {
            channel,
            low,
            high,
            set_by: set_by.into(),
            ts,
        })
    }

    /// A value exceeds the band when it lies strictly outside `[low, high]`.
    pub fn exceeded_by(&self, value: f64) -> bool {
        value < self.low || value > self.high
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ThresholdError {
    #[error("threshold bounds must be finite")]
    NonFinite,
    #[error("low > high ({low} > {high})")]
    LowAboveHigh { low: f64, high: f64 },
}

/// A position with five decimal places of precision, stored as fixed point
/// so that the wire text survives any number of round trips unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Location {
    lat_e5: i32,
    lon_e5: i32,
}

const LOCATION_SCALE: f64 = 100_000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocationError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("malformed coordinate {0:?}: expected [-]D.DDDDD")]
    Malformed(String),
}

impl Location {
    /// Rounds both coordinates to five decimals.
    pub fn new(lat: f64, lon: f64) -> Result<Self, LocationError> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(LocationError::Latitude(lat));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(LocationError::Longitude(lon));
        }
        Ok(Location {
            lat_e5: (lat * LOCATION_SCALE).round() as i32,
            lon_e5: (lon * LOCATION_SCALE).round() as i32,
        })
    }

    pub fn from_e5(lat_e5: i32, lon_e5: i32) -> Result<Self, LocationError> {
        if !(-9_000_000..=9_000_000).contains(&lat_e5) {
            return Err(LocationError::Latitude(lat_e5 as f64 / LOCATION_SCALE));
        }
        if !(-18_000_000..=18_000_000).contains(&lon_e5) {
            return Err(LocationError::Longitude(lon_e5 as f64 / LOCATION_SCALE));
        }
        Ok(Location { lat_e5, lon_e5 })
    }

    pub fn lat(&self) -> f64 {
        self.lat_e5 as f64 / LOCATION_SCALE
    }

    pub fn lon(&self) -> f64 {
        self.lon_e5 as f64 / LOCATION_SCALE
    }

    pub fn lat_e5(&self) -> i32 {
        self.lat_e5
    }

    pub fn lon_e5(&self) -> i32 {
        self.lon_e5
    }

    /// `lat,lon` with exactly five decimals each.
    pub fn to_wire(&self) -> String {
        format!("{},{}", fmt_e5(self.lat_e5), fmt_e5(self.lon_e5))
    }

    pub fn parse_wire(s: &str) -> Result<Self, LocationError> {
        let (lat, lon) = s
            .split_once(',')
            .ok_or_else(|| LocationError::Malformed(s.to_string()))?;
        Location::from_e5(parse_e5(lat)?, parse_e5(lon)?)
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_wire())
    }
}

fn fmt_e5(v: i32) -> String {
    let sign = if v < 0 { "-" } else { "" };
    let abs = v.unsigned_abs();
    format!("{sign}{}.{:05}", abs / 100_000, abs % 100_000)
}

// Canonical form only: optional '-', at least one integer digit, '.', exactly
// five fraction digits, no negative zero.
fn parse_e5(s: &str) -> Result<i32, LocationError> {
    let malformed = || LocationError::Malformed(s.to_string());
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').ok_or_else(malformed)?;
    let digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || frac.len() != 5 || !digits(frac) || int.len() > 3 {
        return Err(malformed());
    }
    if int.len() > 1 && int.starts_with('0') {
        return Err(malformed());
    }
    let int: i64 = int.parse().map_err(|_| malformed())?;
    let frac: i64 = frac.parse().map_err(|_| malformed())?;
    let magnitude = int * 100_000 + frac;
    if negative && magnitude == 0 {
        return Err(malformed());
    }
    let v = if negative { -magnitude } else { magnitude };
    i32::try_from(v).map_err(|_| malformed())
}

#[derive(Serialize, Deserialize)]
struct LocationRepr {
    lat: f64,
    lon: f64,
}

impl Serialize for Location {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        LocationRepr {
            lat: self.lat(),
            lon: self.lon(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Location {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = LocationRepr::deserialize(deserializer)?;
        Location::new(repr.lat, repr.lon).map_err(serde::de::Error::custom)
    }
}

/// A line on the short-message bus.
#[derive(Debug, Clone, PartialEq)]
pub enum SmsMessage {
    Alarm {
        ts: Timestamp,
        elder_id: String,
        sensor_id: String,
        location: Location,
    },
    Threshold {
        ts: Timestamp,
        elder_id: String,
        channel: VitalChannel,
        low: f64,
        high: f64,
        doctor_id: String,
    },
    Advice {
        ts: Timestamp,
        elder_id: String,
        doctor_id: String,
        text: String,
    },
}

impl SmsMessage {
    pub fn kind(&self) -> SmsKind {
        match self {
            SmsMessage::Alarm { .. } => SmsKind::Alarm,
            SmsMessage::Threshold { .. } => SmsKind::Threshold,
            SmsMessage::Advice { .. } => SmsKind::Advice,
        }
    }

    pub fn elder_id(&self) -> &str {
        match self {
            SmsMessage::Alarm { elder_id, .. }
            | SmsMessage::Threshold { elder_id, .. }
            | SmsMessage::Advice { elder_id, .. } => elder_id,
        }
    }

    pub fn ts(&self) -> Timestamp {
        match self {
            SmsMessage::Alarm { ts, .. }
            | SmsMessage::Threshold { ts, .. }
            | SmsMessage::Advice { ts, .. } => *ts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SmsKind {
    Alarm,
    Threshold,
    Advice,
}

impl SmsKind {
    pub fn tag(self) -> &'static str {
        match self {
            SmsKind::Alarm => "ALARM",
            SmsKind::Threshold => "THRESH",
            SmsKind::Advice => "ADVICE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("field {field}: {reason}")]
    InvalidField { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("line is not ASCII")]
    NotAscii,
    #[error("line contains an embedded line break")]
    EmbeddedNewline,
    #[error("unknown kind {0:?}")]
    UnknownKind(String),
    #[error("{kind} expects {expected} fields, found {found}")]
    FieldCount {
        kind: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("field {position} ({name}): {reason}")]
    InvalidField {
        position: usize,
        name: &'static str,
        reason: String,
    },
    #[error("low > high ({low} > {high})")]
    LowAboveHigh { low: String, high: String },
}

fn check_id(field: &'static str, id: &str) -> Result<(), String> {
    if id.is_empty() {
        return Err(format!("{field} is empty"));
    }
    if let Some(b) = id
        .bytes()
        .find(|b| !b.is_ascii_graphic() || *b == b'|' || *b == b',')
    {
        return Err(format!("{field} contains forbidden byte 0x{b:02x}"));
    }
    Ok(())
}

/// Ids travel unescaped on the wire: printable ASCII without spaces, pipes
/// or commas.
pub fn validate_id(field: &'static str, id: &str) -> Result<(), EncodeError> {
    check_id(field, id).map_err(|reason| EncodeError::InvalidField { field, reason })
}

fn check_text(text: &str) -> Result<(), String> {
    match text
        .bytes()
        .find(|b| !(b.is_ascii_graphic() || *b == b' ' || *b == b'\t'))
    {
        Some(b) => Err(format!("text contains non-encodable byte 0x{b:02x}")),
        None => Ok(()),
    }
}

fn encode_number(field: &'static str, v: f64) -> Result<String, EncodeError> {
    if !v.is_finite() {
        return Err(EncodeError::InvalidField {
            field,
            reason: "not finite".into(),
        });
    }
    Ok(format!("{v}"))
}

/// Encodes a message as one LF-terminated line.
pub fn encode_sms(msg: &SmsMessage) -> Result<String, EncodeError> {
    let body = match msg {
        SmsMessage::Alarm {
            ts,
            elder_id,
            sensor_id,
            location,
        } => {
            validate_id("elder_id", elder_id)?;
            validate_id("sensor_id", sensor_id)?;
            format!("ALARM|{ts}|{elder_id}|{sensor_id}|{}", location.to_wire())
        }
        SmsMessage::Threshold {
            ts,
            elder_id,
            channel,
            low,
            high,
            doctor_id,
        } => {
            validate_id("elder_id", elder_id)?;
            validate_id("doctor_id", doctor_id)?;
            let lo = encode_number("low", *low)?;
            let hi = encode_number("high", *high)?;
            if low > high {
                return Err(EncodeError::InvalidField {
                    field: "low",
                    reason: format!("low > high ({lo} > {hi})"),
                });
            }
            format!("THRESH|{ts}|{elder_id}|{channel}|{lo}|{hi}|{doctor_id}")
        }
        SmsMessage::Advice {
            ts,
            elder_id,
            doctor_id,
            text,
        } => {
            validate_id("elder_id", elder_id)?;
            validate_id("doctor_id", doctor_id)?;
            check_text(text).map_err(|reason| EncodeError::InvalidField {
                field: "text",
                reason,
            })?;
            format!("ADVICE|{ts}|{elder_id}|{doctor_id}|{text}")
        }
    };
    Ok(body + "\n")
}

fn field_err(position: usize, name: &'static str, reason: impl Into<String>) -> DecodeError {
    DecodeError::InvalidField {
        position,
        name,
        reason: reason.into(),
    }
}

fn decode_ts(fields: &[&str], position: usize) -> Result<Timestamp, DecodeError> {
    fields[position]
        .parse::<Timestamp>()
        .map_err(|e| field_err(position, "ts", e.to_string()))
}

fn decode_id(fields: &[&str], position: usize, name: &'static str) -> Result<String, DecodeError> {
    let raw = fields[position];
    check_id(name, raw).map_err(|reason| field_err(position, name, reason))?;
    Ok(raw.to_string())
}

fn decode_number(fields: &[&str], position: usize, name: &'static str) -> Result<f64, DecodeError> {
    let v: f64 = fields[position]
        .parse()
        .map_err(|e: std::num::ParseFloatError| field_err(position, name, e.to_string()))?;
    if !v.is_finite() {
        return Err(field_err(position, name, "not finite"));
    }
    Ok(v)
}

/// Decodes one line. A single trailing LF is accepted; field positions in
/// errors count the kind tag as position 0.
pub fn decode_sms(line: &str) -> Result<SmsMessage, DecodeError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    if !line.is_ascii() {
        return Err(DecodeError::NotAscii);
    }
    if line.contains(['\n', '\r']) {
        return Err(DecodeError::EmbeddedNewline);
    }
    let tag = line.split('|').next().unwrap_or_default();
    let (kind, expected) = match tag {
        "ALARM" => (SmsKind::Alarm, 5),
        "THRESH" => (SmsKind::Threshold, 7),
        "ADVICE" => (SmsKind::Advice, 5),
        other => return Err(DecodeError::UnknownKind(other.to_string())),
    };
    let fields: Vec<&str> = if kind == SmsKind::Advice {
        line.splitn(expected, '|').collect()
    } else {
        line.split('|').collect()
    };
    if fields.len() != expected {
        return Err(DecodeError::FieldCount {
            kind: kind.tag(),
            expected,
            found: fields.len(),
        });
    }
    let msg = match kind {
        SmsKind::Alarm => SmsMessage::Alarm {
            ts: decode_ts(&fields, 1)?,
            elder_id: decode_id(&fields, 2, "elder_id")?,
            sensor_id: decode_id(&fields, 3, "sensor_id")?,
            location: Location::parse_wire(fields[4])
                .map_err(|e| field_err(4, "location", e.to_string()))?,
        },
        SmsKind::Threshold => {
            let ts = decode_ts(&fields, 1)?;
            let elder_id = decode_id(&fields, 2, "elder_id")?;
            let channel: VitalChannel = fields[3]
                .parse()
                .map_err(|e: UnknownChannel| field_err(3, "channel", e.to_string()))?;
            let low = decode_number(&fields, 4, "low")?;
            let high = decode_number(&fields, 5, "high")?;
            let doctor_id = decode_id(&fields, 6, "doctor_id")?;
            if low > high {
                return Err(DecodeError::LowAboveHigh {
                    low: fields[4].to_string(),
                    high: fields[5].to_string(),
                });
            }
            SmsMessage::Threshold {
                ts,
                elder_id,
                channel,
                low,
                high,
                doctor_id,
            }
        }
        SmsKind::Advice => {
            let text = fields[4];
            check_text(text).map_err(|reason| field_err(4, "text", reason))?;
            SmsMessage::Advice {
                ts: decode_ts(&fields, 1)?,
                elder_id: decode_id(&fields, 2, "elder_id")?,
                doctor_id: decode_id(&fields, 3, "doctor_id")?,
                text: text.to_string(),
            }
        }
    };
    Ok(msg)
}

/// Anything that can arrive at the gateway.
#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Sms(SmsMessage),
    Vital(VitalRecord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InboundCategory {
    Threshold,
    Advice,
    Physiological,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("ALARM messages are outbound-only and cannot be received by a gateway")]
pub struct OutboundOnly;

/// Sorts gateway input into threshold updates, doctor advice and
/// physiological data.
pub fn classify_inbound(input: &Inbound) -> Result<InboundCategory, OutboundOnly> {
    match input {
        Inbound::Sms(SmsMessage::Threshold { .. }) => Ok(InboundCategory::Threshold),
        Inbound::Sms(SmsMessage::Advice { .. }) => Ok(InboundCategory::Advice),
        Inbound::Sms(SmsMessage::Alarm { .. }) => Err(OutboundOnly),
        Inbound::Vital(_) => Ok(InboundCategory::Physiological),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayEventKind {
    AlarmRaised,
    AlarmCancelled,
    AlarmDispatched,
    QuickAlarm,
    ThresholdReceived,
    AdviceReceived,
}

/// Gateway-side event carried to the server alongside vitals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub elder_id: String,
    /// Per-gateway sequence number, the dedup key on the server.
    pub seq: u64,
    pub kind: GatewayEventKind,
    pub ts: Timestamp,
    pub detail: String,
}

/// One bulk upload. `frame_id` lets the gateway match acknowledgements to
/// the frame they answer.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BulkFrame {
    pub frame_id: u64,
    pub records: Vec<VitalRecord>,
    pub events: Vec<EventRecord>,
}

impl BulkFrame {
    /// Builds a frame, putting records in `(sensor_id, seq)` order and events
    /// in `seq` order.
    pub fn new(frame_id: u64, mut records: Vec<VitalRecord>, mut events: Vec<EventRecord>) -> Self {
        records.sort_by(|a, b| (&a.sensor_id, a.seq).cmp(&(&b.sensor_id, b.seq)));
        events.sort_by_key(|e| e.seq);
        BulkFrame {
            frame_id,
            records,
            events,
        }
    }

    /// Records plus events.
    pub fn len(&self) -> usize {
        self.records.len() + self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self) -> Result<(), FrameError> {
        let sorted = self
            .records
            .windows(2)
            .all(|w| (&w[0].sensor_id, w[0].seq) < (&w[1].sensor_id, w[1].seq));
        if !sorted {
            return Err(FrameError::Malformed(
                "records not strictly ordered by (sensor_id, seq)".into(),
            ));
        }
        if let Some(r) = self.records.iter().find(|r| !r.value.is_finite()) {
            return Err(FrameError::Malformed(format!(
                "record {}/{} has a non-finite value",
                r.sensor_id, r.seq
            )));
        }
        if !self.events.windows(2).all(|w| w[0].seq < w[1].seq) {
            return Err(FrameError::Malformed("events not strictly ordered by seq".into()));
        }
        Ok(())
    }
}

/// Acknowledgement for a bulk frame: how many of its entries were processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BulkAck {
    pub frame_id: u64,
    pub accepted: u64,
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("truncated frame: header declares {declared} bytes, {available} present")]
    Truncated { declared: usize, available: usize },
    #[error("frame length mismatch: header declares {declared} bytes, {available} present")]
    LengthMismatch { declared: usize, available: usize },
    #[error("frame of {0} bytes exceeds the maximum")]
    TooLarge(usize),
    #[error("malformed payload: {0}")]
    Malformed(String),
}

impl From<serde_json::Error> for FrameError {
    fn from(e: serde_json::Error) -> Self {
        FrameError::Malformed(e.to_string())
    }
}

/// Prefixes `payload` with its big-endian `u32` length.
pub fn encode_frame(payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_FRAME_BYTES {
        return Err(FrameError::TooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_BYTES + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

/// A frame's payload and the bytes after it.
pub type Split<'a> = (&'a [u8], &'a [u8]);

/// Splits one complete frame off the front of `buf`, returning the payload
/// and the remaining bytes. `Ok(None)` means more bytes are needed.
pub fn split_frame(buf: &[u8]) -> Result<Option<Split<'_>>, FrameError> {
    if buf.len() < FRAME_HEADER_BYTES {
        return Ok(None);
    }
    let declared = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if declared > MAX_FRAME_BYTES {
        return Err(FrameError::TooLarge(declared));
    }
    let body = &buf[FRAME_HEADER_BYTES..];
    if body.len() < declared {
        return Ok(None);
    }
    Ok(Some(body.split_at(declared)))
}

/// Strips the header from a buffer that must hold exactly one frame.
pub fn decode_frame(buf: &[u8]) -> Result<&[u8], FrameError> {
    if buf.len() < FRAME_HEADER_BYTES {
        return Err(FrameError::Truncated {
            declared: FRAME_HEADER_BYTES,
            available: buf.len(),
        });
    }
    let declared = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if declared > MAX_FRAME_BYTES {
        return Err(FrameError::TooLarge(declared));
    }
    let available = buf.len() - FRAME_HEADER_BYTES;
    if available < declared {
        return Err(FrameError::Truncated {
            declared,
            available,
        });
    }
    if available > declared {
        return Err(FrameError::LengthMismatch {
            declared,
            available,
        });
    }
    Ok(&buf[FRAME_HEADER_BYTES..])
}

pub fn frame_bulk(frame: &BulkFrame) -> Result<Vec<u8>, FrameError> {
    frame.check()?;
    encode_frame(&serde_json::to_vec(frame)?)
}

pub fn unframe_bulk(bytes: &[u8]) -> Result<BulkFrame, FrameError> {
    bulk_from_payload(decode_frame(bytes)?)
}

/// Parses and validates a bulk payload that has already been unframed.
pub fn bulk_from_payload(payload: &[u8]) -> Result<BulkFrame, FrameError> {
    let frame: BulkFrame = serde_json::from_slice(payload)?;
    frame.check()?;
    Ok(frame)
}

pub fn frame_ack(ack: &BulkAck) -> Vec<u8> {
    // A two-integer object is far below the size limit.
    encode_frame(&serde_json::to_vec(ack).expect("ack serializes")).expect("ack fits in a frame")
}

pub fn unframe_ack(bytes: &[u8]) -> Result<BulkAck, FrameError> {
    Ok(serde_json::from_slice(decode_frame(bytes)?)?)
}
