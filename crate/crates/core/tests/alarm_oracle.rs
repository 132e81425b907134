mod common;

use std::time::Duration;

use common::{gateway_decisions, reference_decisions, run_alarm_oracle, AlarmCase, AlarmInput};
use icare_core::gateway::DispatchCause;
use icare_core::protocol::VitalChannel;

#[test]
fn gateway_matches_reference_on_random_streams() {
    let run = run_alarm_oracle(10_000, 0x1CA4E);
    assert_eq!(run.cases, 40_000);
    assert_eq!(run.mismatches, 0, "{}", run.first_mismatch.unwrap_or_default());
    assert!(run.dispatches > 1_000, "generator too tame: {} dispatches", run.dispatches);
    assert!(run.elapsed < Duration::from_secs(10), "took {:?}", run.elapsed);
}

#[test]
fn reference_agrees_on_the_worked_examples() {
    let case = |inputs: Vec<(i64, AlarmInput)>| AlarmCase {
        channel: VitalChannel::EcgHr,
        low: 50.0,
        high: 100.0,
        wait: 30,
        inputs,
    };
    use AlarmInput::*;
    let flagged_once = case(vec![(0, Sample(80.0)), (10, Sample(120.0)), (20, Sample(85.0))]);
    assert_eq!(reference_decisions(&flagged_once), (vec![], 0));

    let twice = case(vec![(0, Sample(120.0)), (10, Sample(130.0))]);
    assert_eq!(reference_decisions(&twice), (vec![(40, 10, DispatchCause::Timeout)], 0));

    let cancelled = case(vec![(0, Sample(120.0)), (10, Sample(130.0)), (39, Cancel)]);
    assert_eq!(reference_decisions(&cancelled), (vec![], 1));

    let late = case(vec![(0, Sample(120.0)), (10, Sample(130.0)), (40, Cancel)]);
    assert_eq!(reference_decisions(&late), (vec![(40, 10, DispatchCause::Timeout)], 0));

    for c in [flagged_once, twice, cancelled, late] {
        assert_eq!(reference_decisions(&c), gateway_decisions(&c));
    }
}
