//! Shared generators and reference models for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use icare_core::gateway::{DispatchCause, Effect, Gateway, GatewayConfig, PromptResponse};
use icare_core::protocol::{
    BulkFrame, EventRecord, GatewayEventKind, Location, SmsMessage, Timestamp, VitalChannel,
    VitalRecord,
};
use icare_core::server::{ConfidenceLevel, HealthServer, Rating, Role, ServerConfig, UserSeed, Verdict};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Alarm rule: an independent interpreter of the escalation rules.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlarmInput {
    Sample(f64),
    Cancel,
    Confirm,
}

#[derive(Debug, Clone)]
pub struct AlarmCase {
    pub channel: VitalChannel,
    pub low: f64,
    pub high: f64,
    pub wait: i64,
    /// Strictly increasing times.
    pub inputs: Vec<(Timestamp, AlarmInput)>,
}

/// `(alarm_ts, trigger_ts, cause)` per dispatch, then the number of
/// cancellations.
pub type Decisions = (Vec<(Timestamp, Timestamp, DispatchCause)>, usize);

/// Reads the rules literally:
/// * a sample outside `[low, high]` marks a flag; a second flagged sample
///   right after it raises an alarm and opens a waiting window;
/// * samples arriving while the window is open do not count;
/// * cancelling before the window closes drops the alarm; confirming
///   before it closes dispatches at once; otherwise it dispatches when the
///   window closes;
/// * after a dispatch the channel must read in range once before it can
///   flag again.
pub fn reference_decisions(case: &AlarmCase) -> Decisions {
    let outside = |v: f64| !(case.low <= v && v <= case.high);
    let mut dispatches = Vec::new();
    let mut cancels = 0;
    let mut previous_flagged = false;
    let mut window: Option<(Timestamp, Timestamp)> = None; // (closes_at, raised_by)
    let mut must_settle = false;

    for &(t, input) in &case.inputs {
        if let Some((closes_at, raised_by)) = window {
            if closes_at <= t {
                dispatches.push((closes_at, raised_by, DispatchCause::Timeout));
                window = None;
                must_settle = true;
            }
        }
        match input {
            AlarmInput::Sample(v) => {
                if window.is_some() {
                    continue;
                }
                if must_settle {
                    if !outside(v) {
                        must_settle = false;
                    }
                    previous_flagged = false;
                    continue;
                }
                if outside(v) && previous_flagged {
                    window = Some((t + case.wait, t));
                    previous_flagged = false;
                } else {
                    previous_flagged = outside(v);
                }
            }
            AlarmInput::Cancel => {
                if window.take().is_some() {
                    cancels += 1;
                }
            }
            AlarmInput::Confirm => {
                if let Some((_, raised_by)) = window.take() {
                    dispatches.push((t, raised_by, DispatchCause::Confirmed));
                    must_settle = true;
                }
            }
        }
    }
    if let Some((closes_at, raised_by)) = window {
        dispatches.push((closes_at, raised_by, DispatchCause::Timeout));
    }
    (dispatches, cancels)
}

/// Drives a real gateway, ticking at every wake-up it asks for.
pub fn gateway_decisions(case: &AlarmCase) -> Decisions {
    let mut config = GatewayConfig::new("E01", [case.channel]);
    config.thresholds.insert(case.channel, [case.low, case.high]);
    config.alarm_wait_s = case.wait;
    config.bulk_interval_s = 1 << 40;
    config.alarm_targets = vec!["EC".into()];
    let mut gw = Gateway::new(config, 0).expect("valid config");
    let mut effects = Vec::new();
    let catch_up = |gw: &mut Gateway, t: Timestamp, effects: &mut Vec<Effect>| {
        while gw.next_wakeup() <= t {
            let at = gw.next_wakeup();
            effects.extend(gw.tick(at));
        }
    };
    let mut last_t = 0;
    for (seq, &(t, input)) in case.inputs.iter().enumerate() {
        catch_up(&mut gw, t, &mut effects);
        match input {
            AlarmInput::Sample(value) => {
                let rec = VitalRecord {
                    elder_id: "E01".into(),
                    sensor_id: "S1".into(),
                    channel: case.channel,
                    seq: seq as u64,
                    ts: t,
                    value,
                };
                effects.extend(gw.ingest_sample(rec, t).expect("in-order sample"));
            }
            AlarmInput::Cancel => {
                effects.extend(gw.respond_to_alarm_prompt(case.channel, PromptResponse::Cancel, t))
            }
            AlarmInput::Confirm => {
                effects.extend(gw.respond_to_alarm_prompt(case.channel, PromptResponse::Confirm, t))
            }
        }
        last_t = t;
    }
    catch_up(&mut gw, last_t + case.wait, &mut effects);
    let mut dispatches = Vec::new();
    let mut cancels = 0;
    for e in effects {
        match e {
            Effect::AlarmDispatched {
                alarm_ts,
                trigger_ts,
                cause,
                ..
            } => dispatches.push((alarm_ts, trigger_ts, cause)),
            Effect::AlarmCancelled { .. } => cancels += 1,
            _ => {}
        }
    }
    (dispatches, cancels)
}

pub fn random_alarm_case(rng: &mut impl Rng, channel: VitalChannel) -> AlarmCase {
    let low = f64::from(rng.gen_range(0..2000)) / 10.0;
    let high = if rng.gen_bool(0.1) {
        low
    } else {
        low + f64::from(rng.gen_range(1..1000)) / 10.0
    };
    let wait = rng.gen_range(1..=45);
    let len = rng.gen_range(0..=50);
    let mut t = 0;
    let mut inputs = Vec::with_capacity(len);
    for _ in 0..len {
        t += rng.gen_range(1..=15);
        let input = match rng.gen_range(0..20) {
            0 => AlarmInput::Cancel,
            1 => AlarmInput::Confirm,
            _ => AlarmInput::Sample(match rng.gen_range(0..6) {
                0 => low,
                1 => high,
                2 => low - f64::from(rng.gen_range(1..300)) / 10.0,
                3 => high + f64::from(rng.gen_range(1..300)) / 10.0,
                _ => rng.gen_range(low..=high),
            }),
        };
        inputs.push((t, input));
    }
    AlarmCase {
        channel,
        low,
        high,
        wait,
        inputs,
    }
}

pub struct OracleRun {
    pub cases: usize,
    pub mismatches: usize,
    pub dispatches: usize,
    pub elapsed: Duration,
    pub first_mismatch: Option<String>,
}

pub fn run_alarm_oracle(per_channel: usize, seed: u64) -> OracleRun {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut run = OracleRun {
        cases: 0,
        mismatches: 0,
        dispatches: 0,
        elapsed: Duration::ZERO,
        first_mismatch: None,
    };
    for channel in VitalChannel::ALL {
        for _ in 0..per_channel {
            let case = random_alarm_case(&mut rng, channel);
            let expected = reference_decisions(&case);
            let actual = gateway_decisions(&case);
            run.cases += 1;
            run.dispatches += expected.0.len();
            if expected != actual {
                run.mismatches += 1;
                run.first_mismatch
                    .get_or_insert_with(|| format!("{case:?}\nexpected {expected:?}\nactual {actual:?}"));
            }
        }
    }
    run.elapsed = started.elapsed();
    run
}

// ---------------------------------------------------------------------------
// Codec generators.

pub fn id() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_.:#@-]{1,12}"
}

pub fn channel() -> impl Strategy<Value = VitalChannel> {
    prop::sample::select(VitalChannel::ALL.to_vec())
}

pub fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1.0e6..1.0e6f64,
        any::<i32>().prop_map(f64::from),
        prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
    ]
}

pub fn location() -> impl Strategy<Value = Location> {
    (-9_000_000..=9_000_000i32, -18_000_000..=18_000_000i32)
        .prop_map(|(lat, lon)| Location::from_e5(lat, lon).unwrap())
}

pub fn sms_message() -> impl Strategy<Value = SmsMessage> {
    prop_oneof![
        (any::<i64>(), id(), id(), location()).prop_map(|(ts, elder_id, sensor_id, location)| {
            SmsMessage::Alarm {
                ts,
                elder_id,
                sensor_id,
                location,
            }
        }),
        (any::<i64>(), id(), channel(), finite(), finite(), id()).prop_map(
            |(ts, elder_id, channel, a, b, doctor_id)| SmsMessage::Threshold {
                ts,
                elder_id,
                channel,
                low: a.min(b),
                high: a.max(b),
                doctor_id,
            }
        ),
        (any::<i64>(), id(), id(), "[ -~\t]{0,120}").prop_map(|(ts, elder_id, doctor_id, text)| {
            SmsMessage::Advice {
                ts,
                elder_id,
                doctor_id,
                text,
            }
        }),
    ]
}

pub fn vital_record() -> impl Strategy<Value = VitalRecord> {
    (id(), id(), channel(), any::<u64>(), any::<i64>(), finite()).prop_map(
        |(elder_id, sensor_id, channel, seq, ts, value)| VitalRecord {
            elder_id,
            sensor_id,
            channel,
            seq,
            ts,
            value,
        },
    )
}

pub fn event_kind() -> impl Strategy<Value = GatewayEventKind> {
    prop::sample::select(vec![
        GatewayEventKind::AlarmRaised,
        GatewayEventKind::AlarmCancelled,
        GatewayEventKind::AlarmDispatched,
        GatewayEventKind::QuickAlarm,
        GatewayEventKind::ThresholdReceived,
        GatewayEventKind::AdviceReceived,
    ])
}

pub fn event_record() -> impl Strategy<Value = EventRecord> {
    (id(), any::<u64>(), event_kind(), any::<i64>(), "\\PC{0,40}").prop_map(
        |(elder_id, seq, kind, ts, detail)| EventRecord {
            elder_id,
            seq,
            kind,
            ts,
            detail,
        },
    )
}

pub fn bulk_frame() -> impl Strategy<Value = BulkFrame> {
    (
        any::<u64>(),
        prop::collection::vec(vital_record(), 0..20),
        prop::collection::vec(event_record(), 0..6),
    )
        .prop_map(|(frame_id, records, events)| BulkFrame::new(frame_id, records, events))
}

// ---------------------------------------------------------------------------
// Knowledge base.

#[derive(Debug, Clone)]
pub struct EntrySpec {
    pub keyword: &'static str,
    pub ratings: Vec<Rating>,
    pub feedback: Vec<Verdict>,
}

pub fn rating() -> impl Strategy<Value = Rating> {
    prop::sample::select(vec![Rating::Zero, Rating::Half, Rating::One])
}

pub fn verdict() -> impl Strategy<Value = Verdict> {
    prop::sample::select(vec![Verdict::Helpful, Verdict::Unhelpful])
}

pub fn entry_spec() -> impl Strategy<Value = EntrySpec> {
    (
        prop::sample::select(vec!["insomnia", "diet", "Insomnia"]),
        prop::collection::vec(rating(), 0..5),
        prop::collection::vec(verdict(), 0..12),
    )
        .prop_map(|(keyword, ratings, feedback)| EntrySpec {
            keyword,
            ratings,
            feedback,
        })
}

pub const SPECIALISTS: [&str; 5] = ["SP1", "SP2", "SP3", "SP4", "SP5"];

pub fn knowledge_server() -> HealthServer {
    let mut users: Vec<UserSeed> = SPECIALISTS
        .iter()
        .map(|s| UserSeed {
            id: (*s).into(),
            role: Role::Specialist,
            name: String::new(),
            token: format!("t-{s}"),
        })
        .collect();
    users.push(UserSeed {
        id: "E01".into(),
        role: Role::Elderly,
        name: String::new(),
        token: "t-E01".into(),
    });
    HealthServer::new(&ServerConfig {
        users,
        ..ServerConfig::default()
    })
    .unwrap()
}

pub fn populate(server: &mut HealthServer, specs: &[EntrySpec]) {
    for (i, spec) in specs.iter().enumerate() {
        let id = server
            .add_knowledge("SP1", &[spec.keyword.to_string()], "sleep", "body", i as i64)
            .unwrap()
            .entry_id;
        for (who, r) in SPECIALISTS.iter().zip(&spec.ratings) {
            server.evaluate_knowledge(who, id, *r).unwrap();
        }
        for v in &spec.feedback {
            server.record_feedback("E01", id, *v).unwrap();
        }
    }
}

/// Score recomputed with plain floating point from the definition.
pub fn direct_score(ratings: &[Rating], feedback: &[Verdict]) -> f64 {
    let mean = if ratings.is_empty() {
        0.5
    } else {
        ratings.iter().map(|r| r.value()).sum::<f64>() / ratings.len() as f64
    };
    let net: i64 = feedback
        .iter()
        .map(|v| if *v == Verdict::Helpful { 1 } else { -1 })
        .sum();
    (mean + 0.05 * net as f64).clamp(0.0, 1.0)
}

/// Checks the ranking contract on one generated entry set.
pub fn check_ranking(specs: &[EntrySpec]) -> Result<(), String> {
    let mut server = knowledge_server();
    populate(&mut server, specs);
    for (i, spec) in specs.iter().enumerate() {
        let e = server.knowledge_entry(i as u64 + 1).unwrap();
        let direct = direct_score(&spec.ratings, &spec.feedback);
        if (e.score() - direct).abs() > 1e-9 {
            return Err(format!("entry {}: score {} != direct {direct}", e.entry_id, e.score()));
        }
        // Away from the band edges the float band function must agree.
        let near_edge = (direct - 0.3).abs() < 1e-9 || (direct - 0.7).abs() < 1e-9;
        if !near_edge && e.level() != ConfidenceLevel::from_score(direct) {
            return Err(format!("entry {}: level {:?} for score {direct}", e.entry_id, e.level()));
        }
    }
    for keyword in ["insomnia", "diet"] {
        let general = server.query_knowledge(keyword, None, ConfidenceLevel::General).unwrap();
        let credit = server.query_knowledge(keyword, None, ConfidenceLevel::Credit).unwrap();
        for list in [&general, &credit] {
            if list.iter().any(|e| e.level() == ConfidenceLevel::Weak) {
                return Err("weak entry returned".into());
            }
            for w in list.windows(2) {
                if w[0].confidence() < w[1].confidence() {
                    return Err(format!("unsorted: {} before {}", w[0].score(), w[1].score()));
                }
            }
        }
        let g: BTreeSet<u64> = general.iter().map(|e| e.entry_id).collect();
        if !credit.iter().all(|e| g.contains(&e.entry_id)) {
            return Err("raising min_level added a result".into());
        }
        let expected: BTreeSet<u64> = specs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.keyword.eq_ignore_ascii_case(keyword))
            .map(|(i, _)| i as u64 + 1)
            .filter(|id| server.knowledge_entry(*id).unwrap().level() >= ConfidenceLevel::General)
            .collect();
        if g != expected {
            return Err(format!("general result set {g:?} != {expected:?}"));
        }
    }
    Ok(())
}
