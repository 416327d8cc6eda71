use lanecbf::barrier::{evaluate, BarrierKind, ControllerGains, Formulation, SurroundingVehicle};
use lanecbf::controller::{Controller, ControllerConfig};
use lanecbf::dynamics::{self, ControlInput, InputLimits, VehicleGeometry, VehicleState};
use lanecbf::fsm::{transition, FsmState, Progress, SignalSet};
use lanecbf::lanes::LaneLayout;
use lanecbf::oracle::random_qp;
use lanecbf::qp::{self, kkt_residual, LinearInequality};
use lanecbf::sim::{self, bodies_overlap, build_random, Environment, Traffic};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config() -> ControllerConfig {
    ControllerConfig {
        geometry: VehicleGeometry::default(),
        limits: InputLimits::default(),
        gains: ControllerGains::default(),
        lanes: LaneLayout::new(3.5, 3),
        dt: 0.01,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn straight_coasting_is_exact(x in -100.0..100.0f64, v in 0.0..40.0f64) {
        let geo = VehicleGeometry::default();
        let s = dynamics::step(&VehicleState::new(x, 1.75, 0.0, v), &ControlInput::new(0.0, 0.0), 0.01, &geo);
        prop_assert!((s.x - (x + 0.01 * v)).abs() < 1e-12);
        prop_assert_eq!(s.y, 1.75);
        prop_assert_eq!(s.psi, 0.0);
    }

    #[test]
    fn steering_map_is_odd_and_invertible(beta in -0.5..0.5f64) {
        let geo = VehicleGeometry::default();
        let d = dynamics::steering_from_slip(beta, &geo);
        prop_assert_eq!(dynamics::steering_from_slip(-beta, &geo), -d);
        prop_assert!((dynamics::slip_from_steering(d, &geo) - beta).abs() < 1e-12);
    }

    #[test]
    fn solver_output_is_feasible_and_stationary(seed in any::<u64>()) {
        let p = random_qp(&mut ChaCha8Rng::seed_from_u64(seed), 5, 10);
        let sol = qp::solve(&p).unwrap();
        if sol.is_optimal() {
            for r in &p.inequalities {
                prop_assert!(r.violation(&sol.z) <= 1e-9);
            }
            prop_assert!(kkt_residual(&p, &sol) < 1e-8);
        } else {
            prop_assert!(sol.min_violation > qp::FEASIBILITY_TOL);
        }
    }

    #[test]
    fn scaling_cost_or_rows_keeps_the_minimiser(seed in any::<u64>(), k in 0.1..10.0f64) {
        let p = random_qp(&mut ChaCha8Rng::seed_from_u64(seed), 5, 10);
        let base = qp::solve(&p).unwrap();
        let mut scaled = p.clone();
        scaled.cost_matrix.iter_mut().for_each(|v| *v *= k);
        scaled.cost_vector.iter_mut().for_each(|v| *v *= k);
        scaled.ridge *= k;
        scaled.inequalities = p.inequalities.iter().map(|r: &LinearInequality| r.scaled(1.0 / k)).collect();
        let other = qp::solve(&scaled).unwrap();
        prop_assert_eq!(base.status, other.status);
        if base.is_optimal() {
            for (a, b) in base.z.iter().zip(&other.z) {
                prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn cruise_barrier_grows_with_the_gap(x in 6.0..120.0f64, extra in 0.01..20.0f64, v in 5.0..35.0f64, vk in 5.0..35.0f64) {
        let (g, geo) = (ControllerGains::default(), VehicleGeometry::default());
        let ego = VehicleState::new(0.0, 1.75, 0.0, v);
        let at = |x| SurroundingVehicle { id: 1, x, y: 1.75, v: vk, accel: 0.0, lat_speed: 0.0, lane: 0 };
        let near = evaluate(BarrierKind::Fc, Formulation::Following, &ego, &at(x), &g, &geo).h;
        let far = evaluate(BarrierKind::Fc, Formulation::Following, &ego, &at(x + extra), &g, &geo).h;
        prop_assert!((far - near - extra).abs() < 1e-9);
    }

    #[test]
    fn controller_inputs_respect_the_box(
        y in 0.5..6.0f64, psi in -0.05..0.05f64, v in 5.0..35.0f64,
        ox in -40.0..60.0f64, oy in 0.5..10.0f64, ov in 5.0..35.0f64, c in -1i8..=1,
    ) {
        let cfg = config();
        let ego = VehicleState::new(0.0, y, psi, v);
        let other = SurroundingVehicle { id: 1, x: ox, y: oy, v: ov, accel: 0.0, lat_speed: 0.0, lane: cfg.lanes.lane_of(oy) };
        prop_assume!(!bodies_overlap(&ego, ox, oy, &cfg.geometry));
        let mut ctl = Controller::new(cfg.clone()).unwrap();
        let lim = cfg.limits;
        let mut state = ego;
        let mut beta_prev = 0.0;
        for _ in 0..20 {
            let out = ctl.control_step(&state, &[other], c).unwrap();
            let u = out.input;
            prop_assert!(u.a.abs() <= lim.a_max + 1e-9);
            prop_assert!(u.beta.abs() <= lim.beta_max + 1e-9);
            prop_assert!((u.beta - beta_prev).abs() <= lim.beta_rate_max * cfg.dt + 1e-9);
            prop_assert!(state.v * state.v * u.beta.abs() / cfg.geometry.l_r <= lim.ay_max + 1e-9);
            beta_prev = u.beta;
            state = dynamics::step(&state, &u, cfg.dt, &cfg.geometry);
        }
    }

    #[test]
    fn valid_commands_never_fail_in_cruise(c in -1i8..=1, e in any::<bool>(), r in any::<bool>()) {
        for p in [Progress::InLane, Progress::Crossing, Progress::Complete] {
            let next = transition(FsmState::Acc, SignalSet::new(c, p, e), r).unwrap();
            prop_assert!(next == FsmState::Acc || e);
        }
    }

    #[test]
    fn lane_of_inverts_centres(lane in 0usize..3, off in -1.7..1.7f64) {
        let lanes = LaneLayout::new(3.5, 3);
        prop_assert_eq!(lanes.lane_of(lanes.center(lane) + off), lane);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_scenarios_are_deterministic_and_clear(seed in any::<u64>(), highway in any::<bool>()) {
        let env = if highway { Environment::Highway } else { Environment::Urban };
        let scn = build_random(env, seed);
        prop_assert_eq!(&scn, &build_random(env, seed));
        prop_assert!(scn.validate().is_ok());
        let ego = scn.ego.state();
        for s in &scn.surrounding {
            prop_assert!(!bodies_overlap(&ego, s.x, s.y, &scn.geometry));
        }
    }

    #[test]
    fn surrounding_speeds_stay_clamped(seed in any::<u64>()) {
        let scn = build_random(Environment::Urban, seed);
        let mut traffic = Traffic::new(&scn);
        let ego = scn.ego.state();
        for k in 0..3000 {
            let t = k as f64 * scn.dt;
            traffic.prepare(t, scn.dt, &ego);
            traffic.advance(t, scn.dt);
            for s in &traffic.snapshots()[..5] {
                prop_assert!((10.0..=16.67).contains(&s.v), "speed {}", s.v);
            }
        }
    }

    #[test]
    fn runs_are_reproducible(seed in 0u64..10_000) {
        let mut scn = build_random(Environment::Highway, seed);
        scn.duration = 15.0;
        let a = sim::run_with(&scn, false).unwrap();
        let b = sim::run_with(&scn, false).unwrap();
        prop_assert_eq!(a.summary, b.summary);
        prop_assert_eq!(a.final_others, b.final_others);
    }
}
