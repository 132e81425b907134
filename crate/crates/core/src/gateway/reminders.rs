//! Medicine and climate reminders.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::Timestamp;

pub const HOUR_S: i64 = 3_600;
pub const DAY_S: i64 = 86_400;

/// Allowed medicine reminder periods, hours.
pub const MEDICINE_PERIODS_H: [u32; 3] = [6, 8, 12];
/// Allowed climate reminder periods, days.
pub const CLIMATE_PERIODS_D: [u32; 3] = [1, 2, 3];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("medicine period {0} h is not one of 6, 8 or 12")]
    MedicinePeriod(u32),
    #[error("climate period {0} d is not one of 1, 2 or 3")]
    ClimatePeriod(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReminderKind {
    Medicine,
    Climate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weather {
    pub temp_c: f64,
    #[serde(default)]
    pub rain: bool,
}

/// Supplies the current weather, standing in for a weather proxy.
pub trait WeatherProvider: Send {
    fn current(&mut self, ts: Timestamp) -> Option<Weather>;
}

/// No weather source at all.
#[derive(Debug, Default, Clone)]
pub struct NoWeather;

impl WeatherProvider for NoWeather {
    fn current(&mut self, _ts: Timestamp) -> Option<Weather> {
        None
    }
}

/// Step-hold weather script; unavailable before the first point.
#[derive(Debug, Default, Clone)]
pub struct ScriptedWeather {
    points: Vec<(Timestamp, Weather)>,
}

impl ScriptedWeather {
    pub fn new(mut points: Vec<(Timestamp, Weather)>) -> Self {
        points.sort_by_key(|(ts, _)| *ts);
        ScriptedWeather { points }
    }
}

impl WeatherProvider for ScriptedWeather {
    fn current(&mut self, ts: Timestamp) -> Option<Weather> {
        self.points
            .iter()
            .take_while(|(at, _)| *at <= ts)
            .last()
            .map(|(_, w)| *w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClimateTier {
    SevereCold,
    Cold,
    Heat,
    Rain,
    Fair,
}

/// One row of the climate advice table. A rule matches when every bound it
/// sets holds.
#[derive(Debug, Clone, Copy)]
pub struct ClimateRule {
    pub tier: ClimateTier,
    /// Exclusive lower bound on temperature.
    pub temp_above: Option<f64>,
    /// Inclusive upper bound on temperature.
    pub temp_at_most: Option<f64>,
    /// Inclusive lower bound on temperature.
    pub temp_at_least: Option<f64>,
    pub requires_rain: bool,
    pub advice: &'static str,
}

impl ClimateRule {
    pub fn matches(&self, w: &Weather) -> bool {
        self.temp_above.is_none_or(|b| w.temp_c > b)
            && self.temp_at_most.is_none_or(|b| w.temp_c <= b)
            && self.temp_at_least.is_none_or(|b| w.temp_c >= b)
            && (!self.requires_rain || w.rain)
    }
}

const fn rule(tier: ClimateTier, advice: &'static str) -> ClimateRule {
    ClimateRule {
        tier,
        temp_above: None,
        temp_at_most: None,
        temp_at_least: None,
        requires_rain: false,
        advice,
    }
}

/// Climate advice table, evaluated in order; the first match wins and the
/// last row always matches.
pub const CLIMATE_RULES: [ClimateRule; 5] = [
    ClimateRule {
        temp_at_most: Some(0.0),
        ..rule(
            ClimateTier::SevereCold,
            "Severe cold: stay indoors, dress in layers and keep the room heated.",
        )
    },
    ClimateRule {
        temp_above: Some(0.0),
        temp_at_most: Some(10.0),
        ..rule(ClimateTier::Cold, "Cold: wear a warm coat when going out.")
    },
    ClimateRule {
        temp_at_least: Some(30.0),
        ..rule(
            ClimateTier::Heat,
            "Heat: drink plenty of water and avoid the midday sun.",
        )
    },
    ClimateRule {
        requires_rain: true,
        ..rule(ClimateTier::Rain, "Rain: take an umbrella and mind slippery paths.")
    },
    rule(ClimateTier::Fair, "Fair weather: a short walk is a good idea."),
];

pub fn climate_advice(w: &Weather) -> &'static ClimateRule {
    CLIMATE_RULES
        .iter()
        .find(|r| r.matches(w))
        .unwrap_or(&CLIMATE_RULES[CLIMATE_RULES.len() - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reminder {
    pub kind: ReminderKind,
    /// Scheduled firing time.
    pub due_ts: Timestamp,
    /// Firing number, starting at 1.
    pub k: u64,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weather: Option<Weather>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tier: Option<ClimateTier>,
}

#[derive(Debug, Clone, PartialEq)]
struct Periodic {
    kind: ReminderKind,
    anchor: Timestamp,
    period_s: i64,
    fired: u64,
}

impl Periodic {
    fn next_due(&self) -> Timestamp {
        self.anchor + (self.fired as i64 + 1) * self.period_s
    }
}

/// Periodic reminders fire at `anchor + k * period` for `k >= 1`, exactly
/// once each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReminderSchedule {
    medicine: Option<Periodic>,
    climate: Option<Periodic>,
}

impl ReminderSchedule {
    pub fn new(
        medicine_period_h: Option<u32>,
        climate_period_d: Option<u32>,
        anchor: Timestamp,
    ) -> Result<Self, ScheduleError> {
        let medicine = medicine_period_h
            .map(|h| {
                if MEDICINE_PERIODS_H.contains(&h) {
                    Ok(Periodic {
                        kind: ReminderKind::Medicine,
                        anchor,
                        period_s: h as i64 * HOUR_S,
                        fired: 0,
                    })
                } else {
                    Err(ScheduleError::MedicinePeriod(h))
                }
            })
            .transpose()?;
        let climate = climate_period_d
            .map(|d| {
                if CLIMATE_PERIODS_D.contains(&d) {
                    Ok(Periodic {
                        kind: ReminderKind::Climate,
                        anchor,
                        period_s: d as i64 * DAY_S,
                        fired: 0,
                    })
                } else {
                    Err(ScheduleError::ClimatePeriod(d))
                }
            })
            .transpose()?;
        Ok(ReminderSchedule { medicine, climate })
    }

    pub fn is_off(&self) -> bool {
        self.medicine.is_none() && self.climate.is_none()
    }

    pub fn next_due(&self) -> Option<Timestamp> {
        [&self.medicine, &self.climate]
            .into_iter()
            .flatten()
            .map(Periodic::next_due)
            .min()
    }

    /// Returns every firing due at or before `now` that has not fired yet,
    /// oldest first.
    pub fn due_reminders(
        &mut self,
        now: Timestamp,
        weather: &mut dyn WeatherProvider,
    ) -> Vec<Reminder> {
        let mut out = Vec::new();
        for slot in [&mut self.medicine, &mut self.climate].into_iter().flatten() {
            while slot.next_due() <= now {
                let due_ts = slot.next_due();
                slot.fired += 1;
                out.push(match slot.kind {
                    ReminderKind::Medicine => Reminder {
                        kind: ReminderKind::Medicine,
                        due_ts,
                        k: slot.fired,
                        message: "Time to take your medicine.".into(),
                        weather: None,
                        tier: None,
                    },
                    ReminderKind::Climate => match weather.current(due_ts) {
                        Some(w) => {
                            let rule = climate_advice(&w);
                            Reminder {
                                kind: ReminderKind::Climate,
                                due_ts,
                                k: slot.fired,
                                message: format!(
                                    "Now {:.1} C{}. {}",
                                    w.temp_c,
                                    if w.rain { ", raining" } else { "" },
                                    rule.advice
                                ),
                                weather: Some(w),
                                tier: Some(rule.tier),
                            }
                        }
                        None => Reminder {
                            kind: ReminderKind::Climate,
                            due_ts,
                            k: slot.fired,
                            message: "weather unavailable".into(),
                            weather: None,
                            tier: None,
                        },
                    },
                });
            }
        }
        out.sort_by_key(|r| (r.due_ts, r.kind == ReminderKind::Climate));
        out
    }
}
