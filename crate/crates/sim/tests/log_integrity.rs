mod common;

use common::{renumber, run_seeds, scenario};
use stratval_core::waterfall::InstanceState;
use stratval_sim::events::{Event, EventLog};
use stratval_sim::replay::replay_until;
use stratval_sim::verify::verify;
use stratval_sim::Scenario;

fn final_record(log: &EventLog) -> &Event {
    &log.records.last().expect("records").event
}

#[test]
fn replay_to_the_last_epoch_reproduces_the_final_summary() {
    for log in run_seeds(&scenario("default"), 0..5u64) {
        let state = replay_until(&log, log.header.scenario.epochs);
        let Event::Final { balances, alpha_minted, alpha_burned, instances } = final_record(&log) else {
            panic!("log does not end with a final summary");
        };
        assert_eq!(&state.ledger.balances().collect::<Vec<_>>(), balances);
        assert_eq!(state.ledger.alpha_minted_total(), *alpha_minted);
        assert_eq!(state.ledger.alpha_burned_total(), *alpha_burned);
        assert_eq!(&state.instances.into_iter().collect::<Vec<_>>(), instances);
        state.ledger.check_invariants().unwrap();
    }
}

#[test]
fn every_intermediate_replay_is_consistent() {
    let log = run_seeds(&scenario("lmsr"), [4u64]).remove(0);
    for epoch in 0..log.header.scenario.epochs {
        replay_until(&log, epoch).ledger.check_invariants().unwrap();
    }
}

#[test]
fn instances_follow_the_lifecycle() {
    for log in run_seeds(&scenario("disputes"), 0..5u64) {
        let Event::Final { instances, .. } = final_record(&log) else { panic!() };
        assert!(!instances.is_empty());
        // the last arbitration windows may still be open when the horizon ends
        for (_, state) in instances {
            assert!(matches!(state, InstanceState::Settled | InstanceState::ArbitrationWindow | InstanceState::PendingResolution));
        }
        assert!(instances.iter().filter(|(_, s)| *s == InstanceState::Settled).count() * 2 > instances.len());
    }
}

#[test]
fn reordered_or_trailing_records_are_rejected() {
    let log = run_seeds(&scenario("default"), [1u64]).remove(0);
    let mut swapped = log.clone();
    swapped.records.swap(10, 11);
    assert!(verify(&swapped).iter().any(|v| v.check == "log order"));

    let mut trailing = log.clone();
    let extra = trailing.records[5].clone();
    trailing.records.push(extra);
    renumber(&mut trailing);
    assert!(verify(&trailing).iter().any(|v| v.check == "log order"));

    let mut truncated = log.clone();
    truncated.records.pop();
    assert!(verify(&truncated).iter().any(|v| v.check == "final state"));
}

#[test]
fn illegal_transition_is_rejected() {
    let mut log = run_seeds(&scenario("default"), [2u64]).remove(0);
    let r = log
        .records
        .iter_mut()
        .find(|r| matches!(r.event, Event::Transition { to: InstanceState::PendingResolution, .. }))
        .unwrap();
    if let Event::Transition { to, .. } = &mut r.event {
        *to = InstanceState::Settled;
    }
    assert!(verify(&log).iter().any(|v| v.check == "state transition"));
}

#[test]
fn written_logs_parse_back_identically() {
    let log = run_seeds(&scenario("lmsr"), [3u64]).remove(0);
    let back = EventLog::read_from(&log.to_bytes()[..]).unwrap();
    assert_eq!(back, log);
    assert!(verify(&back).is_empty());
}

#[test]
fn scenario_round_trips_through_toml() {
    let s = scenario("disputes");
    let text = s.to_toml();
    assert_eq!(Scenario::from_toml(&text).unwrap(), s);
}
