//! Scriptable stand-ins for the ECG/accelerometer and blood-pressure
//! devices. Generation is a pure function of the sensor spec and the time.

mod scenario;

use serde::{Deserialize, Serialize};

use crate::protocol::{Timestamp, VitalChannel, VitalRecord};

pub use scenario::{
    load_scenario, parse_scenario, LinkConfig, LinkSpec, PositionPoint, Scenario, ScenarioAction,
    ScenarioError, ScheduledEvent, WeatherPoint,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Constant(f64),
    Ramp { start: f64, slope: f64 },
    /// Step-hold over `(t, value)` points; holds the first value before the
    /// first point and the last value after the last one.
    Script(Vec<(Timestamp, f64)>),
}

impl Generator {
    pub fn value_at(&self, t: Timestamp) -> f64 {
        match self {
            Generator::Constant(v) => *v,
            Generator::Ramp { start, slope } => start + slope * t as f64,
            Generator::Script(points) => {
                let idx = points.partition_point(|(at, _)| *at <= t);
                points[idx.saturating_sub(1)].1
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Generator::Constant(v) if !v.is_finite() => Err("constant value is not finite".into()),
            Generator::Ramp { start, slope } if !start.is_finite() || !slope.is_finite() => {
                Err("ramp parameters must be finite".into())
            }
            Generator::Script(points) => {
                if points.is_empty() {
                    return Err("script has no points".into());
                }
                if let Some(w) = points.windows(2).find(|w| w[0].0 >= w[1].0) {
                    return Err(format!(
                        "script timestamps must be strictly increasing ({} then {})",
                        w[0].0, w[1].0
                    ));
                }
                if points.iter().any(|(_, v)| !v.is_finite()) {
                    return Err("script value is not finite".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    #[serde(rename = "id")]
    pub sensor_id: String,
    pub channel: VitalChannel,
    pub period_s: i64,
    pub generator: Generator,
    /// Last time the sensor reports; unbounded when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until_s: Option<Timestamp>,
}

impl SensorSpec {
    pub fn new(sensor_id: impl Into<String>, channel: VitalChannel, period_s: i64, generator: Generator) -> Self {
        SensorSpec {
            sensor_id: sensor_id.into(),
            channel,
            period_s,
            generator,
            until_s: None,
        }
    }

    pub fn until(mut self, until_s: Timestamp) -> Self {
        self.until_s = Some(until_s);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        crate::protocol::validate_id("sensor id", &self.sensor_id).map_err(|e| e.to_string())?;
        if self.sensor_id == crate::protocol::QUICK_SENSOR_ID {
            return Err(format!("sensor id {:?} is reserved", self.sensor_id));
        }
        if self.period_s < 1 {
            return Err(format!("period_s must be at least 1, got {}", self.period_s));
        }
        self.generator.validate()
    }

    /// Stream sequence number of the sample emitted at `t`.
    pub fn seq_at(&self, t: Timestamp) -> u64 {
        (t / self.period_s) as u64
    }
}

/// Emits a reading iff `t` is a multiple of the sensor period.
pub fn generate_sample(spec: &SensorSpec, elder_id: &str, t: Timestamp, seq: u64) -> Option<VitalRecord> {
    if t < 0 || t % spec.period_s != 0 || spec.until_s.is_some_and(|u| t > u) {
        return None;
    }
    Some(VitalRecord {
        elder_id: elder_id.to_string(),
        sensor_id: spec.sensor_id.clone(),
        channel: spec.channel,
        seq,
        ts: t,
        value: spec.generator.value_at(t),
    })
}

/// Every sample the fleet produces over `[0, horizon]`, ordered by time and
/// then by position in `specs`.
pub fn sample_stream(specs: &[SensorSpec], elder_id: &str, horizon: Timestamp) -> Vec<VitalRecord> {
    let mut out: Vec<(Timestamp, usize, VitalRecord)> = Vec::new();
    for (idx, spec) in specs.iter().enumerate() {
        let mut t = 0;
        while t <= horizon {
            if let Some(rec) = generate_sample(spec, elder_id, t, spec.seq_at(t)) {
                out.push((t, idx, rec));
            }
            t += spec.period_s;
        }
    }
    out.sort_by_key(|(t, idx, _)| (*t, *idx));
    out.into_iter().map(|(_, _, r)| r).collect()
}
