//! Per-step controller: signal bookkeeping, state machine, constraint menu
//! assembly and the QP solve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{
    self, BarrierEvaluation, BarrierKind, Branch, ControllerGains, Formulation, GapMeasures, SurroundingVehicle,
    VehiclesOfInterest,
};
use crate::decision;
use crate::dynamics::{self, ControlInput, InputLimits, VehicleGeometry, VehicleState};
use crate::fsm::{self, FsmError, FsmState, Progress, SignalSet};
use crate::lanes::LaneLayout;
use crate::qp::{self, QpError, QpSolution, QpStatus, QuadraticProgram};

/// Everything the controller needs besides the traffic it observes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub geometry: VehicleGeometry,
    pub limits: InputLimits,
    pub gains: ControllerGains,
    pub lanes: LaneLayout,
    pub dt: f64,
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.geometry.validate()?;
        self.limits.validate()?;
        self.gains.validate()?;
        self.lanes.validate()?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(format!("dt must be positive, got {}", self.dt));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("invalid controller configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Fsm(#[from] FsmError),
}

/// Identity of a barrier for deciding whether the active set changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct BarrierKey {
    kind: BarrierKind,
    vehicle_id: usize,
    lateral: bool,
}

impl BarrierKey {
    fn of(b: &BarrierEvaluation) -> Self {
        Self { kind: b.kind, vehicle_id: b.vehicle_id, lateral: b.branch.is_lateral() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierRecord {
    pub kind: BarrierKind,
    pub vehicle_id: usize,
    pub formulation: Formulation,
    pub branch: Branch,
    pub h: f64,
    /// Slack of the barrier row at the actuated input.
    pub residual: f64,
}

/// Why a lane-change QP was judged unusable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    /// Phase 1 found no feasible point; `min_violation` is its certificate.
    Infeasible { min_violation: f64 },
    /// The QP is solvable but the state lies outside the safe set of a
    /// barrier that would be switched in.
    OutsideSafeSet { kind: BarrierKind, vehicle_id: usize, h: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ControlEvent {
    LaneChangeStarted { target_lane: usize },
    LaneChangeCompleted { lane: usize },
    Aborted { rejection: Rejection },
    Recontained { lane: usize },
    SwitchViolation { kind: BarrierKind, vehicle_id: usize, h: f64 },
    Fallback { state: FsmState, min_violation: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerDiagnostics {
    /// State whose constraint menu produced the actuated input.
    pub state: FsmState,
    pub previous_state: FsmState,
    pub origin_lane: usize,
    pub target_lane: Option<usize>,
    pub v_desired: f64,
    pub barriers: Vec<BarrierRecord>,
    pub qp_status: QpStatus,
    /// `(delta_v, delta_y, delta_psi)`; zero under the fallback input.
    pub slacks: [f64; 3],
    pub kkt_residual: f64,
    /// `Some(passed)` on steps where the active barrier set changed.
    pub switch_check: Option<bool>,
    /// Outcome of the lane-change probe on steps where one was rejected.
    pub rejection: Option<Rejection>,
    pub fallback: bool,
    pub events: Vec<ControlEvent>,
}

impl ControllerDiagnostics {
    pub fn h(&self, kind: BarrierKind) -> Option<f64> {
        self.barriers.iter().find(|b| b.kind == kind).map(|b| b.h)
    }

    pub fn min_h(&self) -> Option<f64> {
        self.barriers.iter().map(|b| b.h).reduce(f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlOutput {
    pub input: ControlInput,
    pub delta_f: f64,
    pub signals: SignalSet,
    pub diagnostics: ControllerDiagnostics,
}

/// Nearest vehicles ahead in the current lane and ahead/behind in the target
/// lane. A vehicle belongs to the lane holding its centre of gravity and,
/// while changing lanes, also to any lane its body already reaches into.
pub fn select_vehicles_of_interest(
    ego: &VehicleState,
    all: &[SurroundingVehicle],
    lanes: &LaneLayout,
    geo: &VehicleGeometry,
    current_lane: usize,
    target_lane: Option<usize>,
) -> VehiclesOfInterest {
    let nearest = |lane: usize, ahead: bool| {
        all.iter()
            .filter(|o| o.lane == lane || lanes.body_overlaps(o.y, geo, lane))
            .filter(|o| if ahead { o.x >= ego.x } else { o.x < ego.x })
            .min_by(|p, q| {
                let dp = (p.x - ego.x).abs();
                let dq = (q.x - ego.x).abs();
                dp.total_cmp(&dq).then(p.id.cmp(&q.id))
            })
            .copied()
    };
    VehiclesOfInterest {
        fc: nearest(current_lane, true),
        ft: target_lane.and_then(|t| nearest(t, true)),
        bt: target_lane.and_then(|t| nearest(t, false)),
    }
}

/// Predicted gaps after the ego accelerates to the speed limit at `a_l`
/// while the others hold their speed. Absent vehicles count as infinitely far.
pub fn predicted_gaps(ego: &VehicleState, voi: &VehiclesOfInterest, gains: &ControllerGains, geo: &VehicleGeometry) -> [f64; 3] {
    let t = (gains.v_l - ego.v) / gains.a_l;
    let d = (gains.v_l * gains.v_l - ego.v * ego.v) / (2.0 * gains.a_l);
    let k = 1.0 + gains.epsilon;
    let gap = |o: &SurroundingVehicle| GapMeasures::between(ego, o, geo).dx;
    [
        voi.fc.map_or(f64::INFINITY, |o| gap(&o) + o.v * t - d - k * ego.v),
        voi.ft.map_or(f64::INFINITY, |o| gap(&o) + o.v * t - d - k * ego.v),
        voi.bt.map_or(f64::INFINITY, |o| gap(&o) - o.v * t + d - k * o.v),
    ]
}

/// Desired cruise speed while a lane change is requested but not yet
/// possible: the speed limit if speeding up keeps every predicted gap
/// positive, otherwise the nominal desired speed.
pub fn predictive_speed_check(ego: &VehicleState, voi: &VehiclesOfInterest, gains: &ControllerGains, geo: &VehicleGeometry) -> f64 {
    if predicted_gaps(ego, voi, gains, geo).iter().all(|g| *g > 0.0) {
        gains.v_l
    } else {
        gains.v_d
    }
}

struct MenuSolve {
    barriers: Vec<BarrierEvaluation>,
    solution: QpSolution,
}

impl MenuSolve {
    fn feasible(&self) -> bool {
        self.solution.is_optimal()
    }

    /// First barrier whose safe set does not contain the current state.
    fn outside_safe_set(&self) -> Option<&BarrierEvaluation> {
        self.barriers.iter().find(|b| b.h < -barrier::SWITCH_TOL)
    }

    fn rejection(&self) -> Option<Rejection> {
        if !self.feasible() {
            return Some(Rejection::Infeasible { min_violation: self.solution.min_violation });
        }
        self.outside_safe_set()
            .map(|b| Rejection::OutsideSafeSet { kind: b.kind, vehicle_id: b.vehicle_id, h: b.h })
    }
}

/// Stateful controller for one ego vehicle.
#[derive(Debug, Clone)]
pub struct Controller {
    config: ControllerConfig,
    cost: Vec<f64>,
    state: FsmState,
    origin_lane: Option<usize>,
    target_lane: Option<usize>,
    /// Last value seen on the command schedule.
    last_schedule: i8,
    /// Command still to be served; cleared once a lane change completes.
    pending: i8,
    progress: Progress,
    dwell_steps: u32,
    prev_input: ControlInput,
    prev_keys: Vec<BarrierKey>,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Result<Self, ControllerError> {
        config.validate().map_err(ControllerError::Config)?;
        let g = &config.gains;
        let n = decision::DIM;
        let mut cost = vec![0.0; n * n];
        cost[0] = g.h[0][0];
        cost[1] = g.h[0][1];
        cost[n] = g.h[1][0];
        cost[n + 1] = g.h[1][1];
        cost[decision::SLACK_V * (n + 1)] = 2.0 * g.p_v;
        cost[decision::SLACK_Y * (n + 1)] = 2.0 * g.p_y;
        cost[decision::SLACK_PSI * (n + 1)] = 2.0 * g.p_psi;
        Ok(Self {
            config,
            cost,
            state: FsmState::Acc,
            origin_lane: None,
            target_lane: None,
            last_schedule: 0,
            pending: 0,
            progress: Progress::InLane,
            dwell_steps: 0,
            prev_input: ControlInput::default(),
            prev_keys: Vec::new(),
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn state(&self) -> FsmState {
        self.state
    }

    pub fn progress(&self) -> Progress {
        self.progress
    }

    pub fn previous_input(&self) -> ControlInput {
        self.prev_input
    }

    fn solve_menu(
        &self,
        ego: &VehicleState,
        y_target: f64,
        v_desired: f64,
        barriers: Vec<BarrierEvaluation>,
    ) -> Result<MenuSolve, ControllerError> {
        let cfg = &self.config;
        let mut qp = QuadraticProgram::new(decision::DIM, self.cost.clone(), vec![0.0; decision::DIM]);
        let (clf, _) = barrier::clf_rows(ego, &cfg.gains, &cfg.geometry, y_target, v_desired);
        qp.extend(clf);
        qp.extend(barriers.iter().map(|b| b.to_row(cfg.gains.gamma(b.kind))));
        qp.extend(dynamics::input_box(ego, &self.prev_input, cfg.dt, &cfg.limits, &cfg.geometry));
        let solution = qp::solve(&qp)?;
        Ok(MenuSolve { barriers, solution })
    }

    fn solve_acc(
        &self,
        ego: &VehicleState,
        all: &[SurroundingVehicle],
        lane: usize,
        v_desired: f64,
    ) -> Result<MenuSolve, ControllerError> {
        let cfg = &self.config;
        let voi = select_vehicles_of_interest(ego, all, &cfg.lanes, &cfg.geometry, lane, None);
        let barriers = voi
            .fc
            .map(|fc| vec![barrier::evaluate(BarrierKind::Fc, Formulation::Following, ego, &fc, &cfg.gains, &cfg.geometry)])
            .unwrap_or_default();
        self.solve_menu(ego, cfg.lanes.center(lane), v_desired, barriers)
    }

    fn solve_lane_change(
        &self,
        ego: &VehicleState,
        voi: &VehiclesOfInterest,
        target: usize,
    ) -> Result<MenuSolve, ControllerError> {
        let cfg = &self.config;
        let fully_in_target = cfg.lanes.body_within(ego.y, &cfg.geometry, target);
        let barriers = barrier::cbf_lane_change(ego, voi, &cfg.gains, &cfg.geometry, fully_in_target);
        self.solve_menu(ego, cfg.lanes.center(target), cfg.gains.v_d, barriers)
    }

    fn solve_back(&self, ego: &VehicleState, voi: &VehiclesOfInterest, origin: usize) -> Result<MenuSolve, ControllerError> {
        let cfg = &self.config;
        let barriers = barrier::cbf_back(ego, voi, &cfg.gains, &cfg.geometry);
        self.solve_menu(ego, cfg.lanes.center(origin), cfg.gains.v_d, barriers)
    }

    /// Maximal braking with the slip angle steering back toward the lane centre.
    fn fallback_input(&self, ego: &VehicleState, lane: usize) -> ControlInput {
        let cfg = &self.config;
        let (lo, hi) = cfg.limits.beta_interval(ego.v, self.prev_input.beta, cfg.dt, &cfg.geometry);
        let wanted = 0.1 * (cfg.lanes.center(lane) - ego.y) - ego.psi;
        ControlInput::new(-cfg.limits.a_max, wanted.max(lo).min(hi))
    }

    fn clamp_to_box(&self, ego: &VehicleState, u: ControlInput) -> ControlInput {
        let cfg = &self.config;
        let (lo, hi) = cfg.limits.beta_interval(ego.v, self.prev_input.beta, cfg.dt, &cfg.geometry);
        ControlInput::new(u.a.clamp(-cfg.limits.a_max, cfg.limits.a_max), u.beta.max(lo).min(hi))
    }

    /// Latches the schedule value so a completed lane change is not repeated
    /// while the schedule still reads the same command.
    fn latch_command(&mut self, command: i8) -> Result<i8, ControllerError> {
        if !(-1..=1).contains(&command) {
            return Err(FsmError::InvalidCommand(command).into());
        }
        if command != self.last_schedule {
            self.last_schedule = command;
            self.pending = command;
        }
        Ok(self.pending)
    }

    /// One control step at the ego state `ego`, given the surrounding traffic
    /// and the schedule's lane-change command.
    pub fn control_step(
        &mut self,
        ego: &VehicleState,
        all: &[SurroundingVehicle],
        command: i8,
    ) -> Result<ControlOutput, ControllerError> {
        let cfg = self.config.clone();
        let lanes = &cfg.lanes;
        let geo = &cfg.geometry;
        let previous_state = self.state;
        let c = self.latch_command(command)?;
        let mut events = Vec::new();
        let mut rejection = None;
        let mut v_desired = cfg.gains.v_d;

        if self.state == FsmState::Acc || self.origin_lane.is_none() {
            self.origin_lane = Some(lanes.lane_of(ego.y));
        }
        let origin = self.origin_lane.unwrap_or(0);

        let (signals, chosen) = match self.state {
            FsmState::Acc => {
                let target = if c != 0 { lanes.adjacent(origin, c) } else { None };
                match target {
                    Some(t) => {
                        let voi = select_vehicles_of_interest(ego, all, lanes, geo, origin, Some(t));
                        let probe = self.solve_lane_change(ego, &voi, t)?;
                        rejection = probe.rejection();
                        let signals = SignalSet::new(c, Progress::InLane, rejection.is_none());
                        let next = fsm::transition(FsmState::Acc, signals, false)?;
                        if next != FsmState::Acc {
                            self.state = next;
                            self.target_lane = Some(t);
                            self.progress = Progress::InLane;
                            self.dwell_steps = 0;
                            events.push(ControlEvent::LaneChangeStarted { target_lane: t });
                            (signals, probe)
                        } else {
                            v_desired = predictive_speed_check(ego, &voi, &cfg.gains, geo);
                            (signals, self.solve_acc(ego, all, origin, v_desired)?)
                        }
                    }
                    None => {
                        let signals = SignalSet::new(c, Progress::InLane, true);
                        (signals, self.solve_acc(ego, all, origin, v_desired)?)
                    }
                }
            }
            FsmState::L | FsmState::R => {
                let target = self.target_lane.expect("lane change without target lane");
                if lanes.body_within(ego.y, geo, target) {
                    self.dwell_steps += 1;
                } else {
                    self.dwell_steps = 0;
                }
                let dwell = f64::from(self.dwell_steps) * cfg.dt;
                let p = fsm::compute_p(ego.y, geo, lanes, origin, target, dwell).max(self.progress);
                self.progress = p;
                if p == Progress::Complete {
                    let signals = SignalSet::new(c, p, true);
                    self.state = fsm::transition(self.state, signals, false)?;
                    self.origin_lane = Some(target);
                    self.target_lane = None;
                    self.pending = 0;
                    events.push(ControlEvent::LaneChangeCompleted { lane: target });
                    (signals, self.solve_acc(ego, all, target, v_desired)?)
                } else {
                    let voi = select_vehicles_of_interest(ego, all, lanes, geo, origin, Some(target));
                    let attempt = self.solve_lane_change(ego, &voi, target)?;
                    let mut keys: Vec<BarrierKey> = attempt.barriers.iter().map(BarrierKey::of).collect();
                    keys.sort();
                    // a stable barrier set only has to stay solvable; a
                    // changed one must also contain the current state
                    let r = if !attempt.feasible() || keys != self.prev_keys { attempt.rejection() } else { None };
                    let signals = SignalSet::new(c, p, r.is_none());
                    let next = fsm::transition(self.state, signals, false)?;
                    if next.is_returning() {
                        rejection = r;
                        self.state = next;
                        self.progress = Progress::InLane;
                        self.dwell_steps = 0;
                        events.push(ControlEvent::Aborted { rejection: r.expect("abort without rejection") });
                        (signals, self.solve_back(ego, &voi, origin)?)
                    } else {
                        (signals, attempt)
                    }
                }
            }
            FsmState::Bl | FsmState::Br => {
                let recontained = lanes.body_within(ego.y, geo, origin);
                let signals = SignalSet::new(c, Progress::InLane, true);
                let next = fsm::transition(self.state, signals, recontained)?;
                if next == FsmState::Acc {
                    self.state = next;
                    self.target_lane = None;
                    events.push(ControlEvent::Recontained { lane: origin });
                    (signals, self.solve_acc(ego, all, origin, v_desired)?)
                } else {
                    let target = self.target_lane.expect("return without target lane");
                    let voi = select_vehicles_of_interest(ego, all, lanes, geo, origin, Some(target));
                    (signals, self.solve_back(ego, &voi, origin)?)
                }
            }
        };

        let mut keys: Vec<BarrierKey> = chosen.barriers.iter().map(BarrierKey::of).collect();
        keys.sort();
        let switched = self.state != previous_state || keys != self.prev_keys;
        let switch_check = switched.then(|| barrier::switch_safety_check(&chosen.barriers));
        if switch_check == Some(false) {
            if let Some(b) = chosen.outside_safe_set() {
                events.push(ControlEvent::SwitchViolation { kind: b.kind, vehicle_id: b.vehicle_id, h: b.h });
            }
        }

        let fallback = !chosen.feasible();
        let (input, slacks) = if fallback {
            events.push(ControlEvent::Fallback { state: self.state, min_violation: chosen.solution.min_violation });
            let lane = self.origin_lane.unwrap_or(origin);
            (self.fallback_input(ego, lane), [0.0; 3])
        } else {
            let z = &chosen.solution.z;
            (
                self.clamp_to_box(ego, ControlInput::new(z[decision::ACCEL], z[decision::BETA])),
                [z[decision::SLACK_V], z[decision::SLACK_Y], z[decision::SLACK_PSI]],
            )
        };

        let barriers = chosen
            .barriers
            .iter()
            .map(|b| BarrierRecord {
                kind: b.kind,
                vehicle_id: b.vehicle_id,
                formulation: b.formulation,
                branch: b.branch,
                h: b.h,
                residual: b.condition_residual(cfg.gains.gamma(b.kind), input.a, input.beta),
            })
            .collect();

        self.prev_input = input;
        self.prev_keys = keys;

        let diagnostics = ControllerDiagnostics {
            state: self.state,
            previous_state,
            origin_lane: self.origin_lane.unwrap_or(origin),
            target_lane: self.target_lane,
            v_desired,
            barriers,
            qp_status: chosen.solution.status,
            slacks,
            kkt_residual: chosen.solution.kkt_residual,
            switch_check,
            rejection,
            fallback,
            events,
        };
        Ok(ControlOutput {
            input,
            delta_f: dynamics::steering_from_slip(input.beta, geo),
            signals,
            diagnostics,
        })
    }
}
