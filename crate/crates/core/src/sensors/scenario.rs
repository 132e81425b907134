//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! name = "two-exceedance-alarm"
//! horizon_s = 600
//! doctor = "D01"              # doctor id used by threshold/advice events
//!
//! [gateway]                   # same keys as the gateway config file
//! elder_id = "E01"
//! enabled_channels = ["ECG_HR"]
//! alarm_targets = ["EC", "F1"]
//! thresholds = { ECG_HR = [50, 100] }
//!
//! [links.alarm]               # sensor | uplink | downlink | alarm
//! latency_s = 2
//! drop = [0]                  # message indices on this link, 0-based
//! duplicate = [1]
//!
//! [[sensor]]
//! id = "S-ECG-1"
//! channel = "ECG_HR"
//! period_s = 10
//! generator = { script = [[0, 80], [10, 120], [20, 130], [30, 85]] }
//! until_s = 300               # optional
//!
//! [[event]]
//! at = 49
//! kind = "cancel"             # cancel | confirm | quick_alarm | threshold
//! channel = "ECG_HR"          # | advice | fail_bulk | pause | resume
//!
//! [[weather]]
//! at = 0
//! temp_c = -5.0
//! rain = false
//!
//! [[position]]
//! at = 0
//! lat = 38.88
//! lon = 121.52                # or `lost = true` for no fix
//! ```
//!
//! Other generators: `{ constant = 72 }` and `{ ramp = { start = 60, slope = 0.5 } }`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Spanned;

use super::SensorSpec;
use crate::gateway::{GatewayConfig, PromptResponse, Weather};
use crate::protocol::{Location, Timestamp, VitalChannel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ScenarioError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Latency and scripted faults of one simulated link.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    #[serde(default)]
    pub latency_s: i64,
    /// Indices (0-based, in send order) of messages that are lost.
    #[serde(default)]
    pub drop: Vec<u64>,
    /// Indices of messages that are delivered twice.
    #[serde(default)]
    pub duplicate: Vec<u64>,
}

impl LinkSpec {
    pub fn with_latency(latency_s: i64) -> Self {
        LinkSpec {
            latency_s,
            ..LinkSpec::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    /// Sensors to gateway.
    #[serde(default)]
    pub sensor: LinkSpec,
    /// Gateway bulk frames to the server; acks travel back with the same
    /// latency.
    #[serde(default)]
    pub uplink: LinkSpec,
    /// Server messages to the gateway.
    #[serde(default)]
    pub downlink: LinkSpec,
    /// Gateway alarm messages to each target.
    #[serde(default)]
    pub alarm: LinkSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioAction {
    Cancel {
        channel: VitalChannel,
    },
    Confirm {
        channel: VitalChannel,
    },
    QuickAlarm,
    Threshold {
        channel: VitalChannel,
        low: f64,
        high: f64,
        doctor: String,
    },
    Advice {
        text: String,
        doctor: String,
    },
    /// The next bulk frame is lost in transit.
    FailBulk,
    Pause,
    Resume,
}

impl ScenarioAction {
    pub fn prompt_response(&self) -> Option<(VitalChannel, PromptResponse)> {
        match self {
            ScenarioAction::Cancel { channel } => Some((*channel, PromptResponse::Cancel)),
            ScenarioAction::Confirm { channel } => Some((*channel, PromptResponse::Confirm)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub at: Timestamp,
    pub action: ScenarioAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherPoint {
    pub at: Timestamp,
    pub temp_c: f64,
    #[serde(default)]
    pub rain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionPoint {
    pub at: Timestamp,
    #[serde(default)]
    pub lat: Option<f64>,
    #[serde(default)]
    pub lon: Option<f64>,
    #[serde(default)]
    pub lost: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub horizon_s: Timestamp,
    pub doctor: String,
    pub gateway: GatewayConfig,
    pub sensors: Vec<SensorSpec>,
    pub events: Vec<ScheduledEvent>,
    pub links: LinkConfig,
    pub weather: Vec<(Timestamp, Weather)>,
    pub track: Vec<(Timestamp, Option<Location>)>,
}

impl Scenario {
    /// The id that receives alarms at the emergency centre: the first
    /// alarm target.
    pub fn emergency_target(&self) -> Option<&str> {
        self.gateway.alarm_targets.first().map(String::as_str)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    at: Timestamp,
    kind: String,
    #[serde(default)]
    channel: Option<VitalChannel>,
    #[serde(default)]
    low: Option<f64>,
    #[serde(default)]
    high: Option<f64>,
    #[serde(default)]
    doctor: Option<String>,
    #[serde(default)]
    text: Option<String>,
}

fn default_doctor() -> String {
    "D01".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    name: String,
    horizon_s: Spanned<Timestamp>,
    #[serde(default = "default_doctor")]
    doctor: String,
    gateway: Spanned<GatewayConfig>,
    #[serde(default, rename = "sensor")]
    sensors: Vec<Spanned<SensorSpec>>,
    #[serde(default, rename = "event")]
    events: Vec<Spanned<RawEvent>>,
    #[serde(default)]
    links: LinkConfig,
    #[serde(default)]
    weather: Vec<Spanned<WeatherPoint>>,
    #[serde(default)]
    position: Vec<Spanned<PositionPoint>>,
}

struct Lines<'a>(&'a str);

impl Lines<'_> {
    fn at(&self, offset: usize) -> usize {
        self.0[..offset.min(self.0.len())].matches('\n').count() + 1
    }

    fn err<T>(&self, spanned: &Spanned<T>, message: impl Into<String>) -> ScenarioError {
        ScenarioError {
            line: Some(self.at(spanned.span().start)),
            message: message.into(),
        }
    }
}

fn convert_event(raw: &RawEvent, default_doctor: &str) -> Result<ScenarioAction, String> {
    let need_channel = || raw.channel.ok_or_else(|| format!("{} event needs a channel", raw.kind));
    let doctor = raw.doctor.clone().unwrap_or_else(|| default_doctor.to_string());
    Ok(match raw.kind.as_str() {
        "cancel" => ScenarioAction::Cancel {
            channel: need_channel()?,
        },
        "confirm" => ScenarioAction::Confirm {
            channel: need_channel()?,
        },
        "quick_alarm" => ScenarioAction::QuickAlarm,
        "threshold" => {
            let (Some(low), Some(high)) = (raw.low, raw.high) else {
                return Err("threshold event needs low and high".into());
            };
            if !(low.is_finite() && high.is_finite()) || low > high {
                return Err(format!("threshold band [{low}, {high}] is invalid"));
            }
            ScenarioAction::Threshold {
                channel: need_channel()?,
                low,
                high,
                doctor,
            }
        }
        "advice" => ScenarioAction::Advice {
            text: raw
                .text
                .clone()
                .filter(|t| !t.trim().is_empty())
                .ok_or("advice event needs text")?,
            doctor,
        },
        "fail_bulk" => ScenarioAction::FailBulk,
        "pause" => ScenarioAction::Pause,
        "resume" => ScenarioAction::Resume,
        other => return Err(format!("unknown event kind {other:?}")),
    })
}

/// Parses and validates scenario text. Errors carry the line of the
/// offending item.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let lines = Lines(text);
    let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError {
        line: e.span().map(|s| lines.at(s.start)),
        message: e.message().to_string(),
    })?;

    let horizon_s = *raw.horizon_s.get_ref();
    if horizon_s < 0 {
        return Err(lines.err(&raw.horizon_s, "horizon_s must not be negative"));
    }
    raw.gateway
        .get_ref()
        .validate()
        .map_err(|e| lines.err(&raw.gateway, format!("gateway: {e}")))?;

    let mut sensors = Vec::with_capacity(raw.sensors.len());
    for s in &raw.sensors {
        s.get_ref()
            .validate()
            .map_err(|e| lines.err(s, format!("sensor {}: {e}", s.get_ref().sensor_id)))?;
        if sensors.iter().any(|o: &SensorSpec| o.sensor_id == s.get_ref().sensor_id) {
            return Err(lines.err(s, format!("duplicate sensor id {}", s.get_ref().sensor_id)));
        }
        sensors.push(s.get_ref().clone());
    }

    let mut events = Vec::with_capacity(raw.events.len());
    for e in &raw.events {
        let ev = e.get_ref();
        if ev.at < 0 || ev.at > horizon_s {
            return Err(lines.err(e, format!("event at {} is outside [0, horizon_s = {horizon_s}]", ev.at)));
        }
        let action = convert_event(ev, &raw.doctor).map_err(|m| lines.err(e, m))?;
        events.push(ScheduledEvent { at: ev.at, action });
    }
    // Stable: events at the same time keep file order.
    events.sort_by_key(|e| e.at);

    for (name, link) in [
        ("sensor", &raw.links.sensor),
        ("uplink", &raw.links.uplink),
        ("downlink", &raw.links.downlink),
        ("alarm", &raw.links.alarm),
    ] {
        if link.latency_s < 0 {
            return Err(ScenarioError {
                line: None,
                message: format!("links.{name}: latency_s must not be negative"),
            });
        }
    }

    let mut weather = Vec::new();
    for w in &raw.weather {
        let p = w.get_ref();
        if !p.temp_c.is_finite() {
            return Err(lines.err(w, "weather temperature is not finite"));
        }
        weather.push((p.at, Weather { temp_c: p.temp_c, rain: p.rain }));
    }

    let mut track = Vec::new();
    for p in &raw.position {
        let point = p.get_ref();
        let loc = match (point.lost, point.lat, point.lon) {
            (true, None, None) => None,
            (false, Some(lat), Some(lon)) => {
                Some(Location::new(lat, lon).map_err(|e| lines.err(p, e.to_string()))?)
            }
            _ => return Err(lines.err(p, "position needs lat and lon, or lost = true")),
        };
        track.push((point.at, loc));
    }

    Ok(Scenario {
        name: raw.name,
        horizon_s,
        doctor: raw.doctor,
        gateway: raw.gateway.into_inner(),
        sensors,
        events,
        links: raw.links,
        weather,
        track,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError {
        line: None,
        message: format!("{}: {e}", path.display()),
    })?;
    parse_scenario(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensors::Generator;

    const MINIMAL: &str = r#"
horizon_s = 60

[gateway]
elder_id = "E01"
enabled_channels = ["ECG_HR"]
alarm_targets = ["EC"]

[[sensor]]
id = "S1"
channel = "ECG_HR"
period_s = 5
generator = { constant = 72 }
"#;

    #[test]
    fn minimal_scenario() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.sensors.len(), 1);
        assert_eq!(s.sensors[0].generator, Generator::Constant(72.0));
        assert!(s.events.is_empty());
        assert_eq!(s.doctor, "D01");
        assert_eq!(s.emergency_target(), Some("EC"));
    }

    #[test]
    fn event_beyond_horizon_names_its_line() {
        let text = format!("{MINIMAL}\n[[event]]\nat = 61\nkind = \"quick_alarm\"\n");
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.message.contains("outside"), "{err}");
        let line = err.line.unwrap();
        assert!(text.lines().nth(line - 1).is_some_and(|l| l.contains("at = 61") || l.contains("[[event]]")), "{err}");
    }

    #[test]
    fn non_monotone_script_is_rejected() {
        let text = MINIMAL.replace("{ constant = 72 }", "{ script = [[0, 80], [10, 90], [5, 70]] }");
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.message.contains("strictly increasing"), "{err}");
        assert!(err.line.is_some());
    }

    #[test]
    fn parse_errors_carry_lines() {
        let err = parse_scenario("horizon_s = 60\n[gateway\n").unwrap_err();
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn all_event_kinds() {
        let text = format!(
            "{MINIMAL}
[[event]]
at = 1
kind = \"threshold\"
channel = \"ECG_HR\"
low = 40
high = 110

[[event]]
at = 2
kind = \"advice\"
text = \"walk daily | rest\"
doctor = \"D02\"

[[event]]
at = 0
kind = \"cancel\"
channel = \"ECG_HR\"

[[event]]
at = 3
kind = \"fail_bulk\"
"
        );
        let s = parse_scenario(&text).unwrap();
        let at: Vec<_> = s.events.iter().map(|e| e.at).collect();
        assert_eq!(at, vec![0, 1, 2, 3]);
        assert_eq!(
            s.events[1].action,
            ScenarioAction::Threshold {
                channel: VitalChannel::EcgHr,
                low: 40.0,
                high: 110.0,
                doctor: "D01".into()
            }
        );
        assert!(matches!(&s.events[2].action, ScenarioAction::Advice { doctor, .. } if doctor == "D02"));

        let bad = format!("{MINIMAL}\n[[event]]\nat = 1\nkind = \"cancel\"\n");
        assert!(parse_scenario(&bad).unwrap_err().message.contains("channel"));
        let bad = format!("{MINIMAL}\n[[event]]\nat = 1\nkind = \"dance\"\n");
        assert!(parse_scenario(&bad).unwrap_err().message.contains("unknown event kind"));
    }

    #[test]
    fn weather_and_position() {
        let text = format!(
            "{MINIMAL}
[[weather]]
at = 0
temp_c = -5

[[position]]
at = 0
lat = 38.88
lon = 121.52

[[position]]
at = 10
lost = true
"
        );
        let s = parse_scenario(&text).unwrap();
        assert_eq!(s.weather, vec![(0, Weather { temp_c: -5.0, rain: false })]);
        assert_eq!(s.track.len(), 2);
        assert_eq!(s.track[1], (10, None));
    }

    #[test]
    fn invalid_gateway_section() {
        let text = MINIMAL.replace("alarm_targets = [\"EC\"]", "alarm_targets = []");
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.message.contains("alarm_targets"), "{err}");
    }
}
