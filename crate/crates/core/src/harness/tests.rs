use super::*;
use crate::gateway::ClimateTier;
use crate::sensors::parse_scenario;

fn demo(name: &str) -> Scenario {
    demo_scenario(name).expect("shipped demo").expect("demo parses")
}

fn run(name: &str) -> RunReport {
    run_scenario(&demo(name)).unwrap()
}

#[test]
fn every_demo_parses_and_runs_clean() {
    for name in demo_names() {
        let report = run(name);
        assert_eq!(report.errors, 0, "{name}: {}", report.summary());
        for (link, stats) in &report.links {
            assert!(stats.balanced(), "{name} {link}: {stats:?}");
        }
    }
}

#[test]
fn two_exceedances_dispatch_once_after_wait_plus_latency() {
    let r = run("two-exceedance");
    assert_eq!(r.dispatches, 1);
    assert_eq!(r.episodes.len(), 1);
    let ep = &r.episodes[0];
    assert_eq!((ep.trigger_ts, ep.alarm_ts, ep.dispatch_ts), (20, 50, Some(52)));
    assert_eq!(ep.latency_s, Some(32));
    // One ALARM per target.
    assert_eq!(r.links["alarm"].sent, 2);
}

#[test]
fn cancel_before_deadline_prevents_dispatch() {
    let r = run("cancel");
    assert_eq!(r.dispatches, 0);
    assert!(r.episodes.is_empty());
    assert_eq!(r.alarms_cancelled, 1);
    assert_eq!(r.links["alarm"].sent, 0);
}

#[test]
fn quick_alarm_arrives_after_link_latency() {
    let r = run("quick-alarm");
    assert_eq!(r.dispatches, 1);
    let ep = &r.episodes[0];
    assert_eq!(ep.cause, DispatchCause::Quick);
    assert_eq!((ep.alarm_ts, ep.dispatch_ts), (100, Some(102)));
    assert_eq!(r.links["alarm"].sent, 3);
}

#[test]
fn lossy_links_still_sync_exactly_once() {
    let mut h = Harness::new(demo("lossy-sync")).unwrap();
    let r = h.run().unwrap();
    assert!(r.links["uplink"].dropped >= 1);
    assert_eq!(r.pending_at_end, 0, "{}", r.summary());
    assert!(r.key_sets_equal);
    assert_eq!(r.records_synced, r.gateway_records);
    assert_eq!(r.server_inserted, r.records_synced);
    assert_eq!(r.gateway_records as u64, r.samples_generated);
    assert_eq!(r.episodes.len(), 2);
    assert_eq!(r.dispatches, 2);
    assert_eq!(r.links["alarm"].duplicated, 2);
    let elder = h.gateway().elder_id().to_string();
    let server_keys = h.server().record_keys(&elder);
    let gw_keys: BTreeSet<_> = h
        .gateway()
        .store()
        .records()
        .iter()
        .map(|r| (r.sensor_id.clone(), r.seq))
        .collect();
    assert_eq!(server_keys, gw_keys);
}

#[test]
fn medicine_and_climate_reminder_counts() {
    let r = run("reminders-medicine");
    let due: Vec<_> = r.reminders_of(ReminderKind::Medicine).map(|r| r.due_ts).collect();
    assert_eq!(due, vec![21_600, 43_200, 64_800, 86_400]);

    let r = run("reminders-climate");
    let tiers: Vec<_> = r.reminders_of(ReminderKind::Climate).map(|r| r.tier).collect();
    assert_eq!(
        tiers,
        vec![Some(ClimateTier::SevereCold), Some(ClimateTier::Cold), Some(ClimateTier::Heat)]
    );
}

#[test]
fn retuned_threshold_reaches_the_gateway() {
    let mut h = Harness::new(demo("doctor-retune")).unwrap();
    let r = h.run().unwrap();
    assert_eq!(r.dispatches, 0);
    assert!(r.episodes.is_empty());
    let t = h.gateway().threshold(VitalChannel::EcgHr).unwrap();
    assert_eq!((t.low, t.high), (40.0, 140.0));
    let server_t = h.server().thresholds("E01");
    assert_eq!((server_t[0].low, server_t[0].high), (t.low, t.high));
    assert_eq!(h.gateway().store().advice_newest_first().len(), 1);
    assert_eq!(r.links["downlink"].delivered, 2);
}

#[test]
fn repeated_runs_share_a_digest() {
    for name in demo_names() {
        assert_eq!(run(name).digest, run(name).digest, "{name}");
    }
    assert_ne!(run("two-exceedance").digest, run("cancel").digest);
}

#[test]
fn step_at_now_keeps_the_clock() {
    let mut h = Harness::new(demo("two-exceedance")).unwrap();
    let processed = h.step(0).unwrap();
    assert!(processed >= 1);
    assert_eq!(h.now(), 0);
    assert_eq!(h.step(-5).unwrap(), 0);
}

#[test]
fn split_steps_match_one_step() {
    let mut a = Harness::new(demo("lossy-sync")).unwrap();
    let mut b = Harness::new(demo("lossy-sync")).unwrap();
    a.step(1000).unwrap();
    a.step(1000).unwrap();
    a.step(2500).unwrap();
    b.step(2500).unwrap();
    assert_eq!(a.now(), 2500);
    assert_eq!(a.effect_log(), b.effect_log());
    assert_eq!(a.report(), b.report());
}

#[test]
fn stepping_past_the_horizon_drains_everything() {
    let mut h = Harness::new(demo("two-exceedance")).unwrap();
    h.step(10_000).unwrap();
    assert!(h.is_quiescent());
    assert_eq!(h.step(20_000).unwrap(), 0);
}

#[test]
fn lossless_latency_is_wait_plus_link() {
    for (wait, latency) in [(10, 0), (30, 2), (45, 7)] {
        let mut s = demo("two-exceedance");
        s.gateway.alarm_wait_s = wait;
        s.links.alarm.latency_s = latency;
        let r = run_scenario(&s).unwrap();
        assert_eq!(r.episodes[0].latency_s, Some(wait + latency));
    }
}

#[test]
fn failed_server_action_reports_its_time() {
    let mut s = demo("doctor-retune");
    s.events.push(crate::sensors::ScheduledEvent {
        at: 500,
        action: ScenarioAction::Advice {
            text: " ".into(),
            doctor: "D01".into(),
        },
    });
    let err = run_scenario(&s).unwrap_err();
    assert_eq!((err.ts, err.component), (500, "server"));
}

#[test]
fn duplicate_sample_delivery_is_logged_not_fatal() {
    let mut s = demo("two-exceedance");
    s.links.sensor.duplicate = vec![3];
    let r = run_scenario(&s).unwrap();
    assert_eq!(r.errors, 1);
    assert_eq!(r.dispatches, 1);
}

#[test]
fn paused_gateway_raises_nothing() {
    let text = format!(
        "{}\n[[event]]\nat = 0\nkind = \"pause\"\n",
        DEMOS.iter().find(|(n, _)| *n == "two-exceedance").unwrap().1
    );
    let r = run_scenario(&parse_scenario(&text).unwrap()).unwrap();
    assert_eq!(r.dispatches, 0);
}

