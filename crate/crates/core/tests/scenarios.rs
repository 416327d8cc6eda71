use lanecbf::fsm::FsmState;
use lanecbf::sim::{self, build_random, build_typical, collision_check, Environment, OutcomeLabel, Scenario, StrictTraffic};

#[test]
fn scenario_one_slows_down_then_changes_lane() {
    let trace = sim::run(&build_typical(1).unwrap()).unwrap();
    assert_eq!(trace.outcome(), OutcomeLabel::LaneChangeSuccess);
    assert_eq!(trace.summary.state_sequence(), vec![FsmState::L, FsmState::Acc]);
    assert!(trace.rows[0].output.input.a < -0.5);
    assert_eq!(trace.rows.len(), 3000);
    assert!(collision_check(&trace, &trace_geometry()).is_none());
}

#[test]
fn scenario_two_speeds_up_first() {
    let trace = sim::run(&build_typical(2).unwrap()).unwrap();
    assert_eq!(trace.outcome(), OutcomeLabel::LaneChangeSuccess);
    let seq = trace.summary.state_sequence();
    assert_eq!(seq, vec![FsmState::Acc, FsmState::L, FsmState::Acc]);
    let entered_l = trace.summary.state_changes[1].0;
    let v_at_change = trace.rows.iter().find(|r| r.t >= entered_l).unwrap().ego.v;
    assert!(v_at_change > 27.5, "v = {v_at_change}");
}

#[test]
fn scenario_three_backs_off_and_retries() {
    let trace = sim::run(&build_typical(3).unwrap()).unwrap();
    assert_eq!(trace.outcome(), OutcomeLabel::LaneChangeSuccess);
    assert_eq!(
        trace.summary.state_sequence(),
        vec![FsmState::L, FsmState::Bl, FsmState::Acc, FsmState::L, FsmState::Acc]
    );
    assert!(trace.summary.aborts >= 1);
    assert_eq!(trace.summary.switch_violations, 0);
}

fn trace_geometry() -> lanecbf::VehicleGeometry {
    lanecbf::VehicleGeometry::default()
}

#[test]
fn boxed_in_ego_stays_in_lane() {
    let trace = sim::run_with(&build_random(Environment::Urban, 7), false).unwrap();
    assert_eq!(trace.outcome(), OutcomeLabel::StillInCurrentLane);
    assert_eq!(trace.summary.end_time, 60.0);
    assert!(trace.summary.rejected_probes > 0);
}

#[test]
fn pass_through_traffic_can_make_the_program_infeasible() {
    // vehicles here drive through each other; the same seed is clean with strict traffic
    let scn = build_random(Environment::Urban, 96);
    let trace = sim::run_with(&scn, false).unwrap();
    assert_eq!(trace.outcome(), OutcomeLabel::QpInfeasible);
    assert!(trace.summary.end_time < 60.0);
    let strict = Scenario { strict_traffic: Some(StrictTraffic::default()), ..scn };
    assert_ne!(sim::run_with(&strict, false).unwrap().outcome(), OutcomeLabel::QpInfeasible);
}

#[test]
fn random_runs_stop_at_success() {
    let trace = sim::run_with(&build_random(Environment::Urban, 8), false).unwrap();
    assert_eq!(trace.outcome(), OutcomeLabel::LaneChangeSuccess);
    assert_eq!(Some(trace.summary.end_time), trace.summary.success_time);
}

#[test]
fn scenario_files_round_trip() {
    for scn in [build_typical(3).unwrap(), build_random(Environment::Highway, 21)] {
        let text = scn.to_toml().unwrap();
        assert_eq!(Scenario::from_toml(&text).unwrap(), scn);
    }
}

#[test]
fn recording_does_not_change_the_run() {
    let scn = build_random(Environment::Highway, 4);
    let a = sim::run_with(&scn, true).unwrap();
    let b = sim::run_with(&scn, false).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.final_ego, b.final_ego);
}
