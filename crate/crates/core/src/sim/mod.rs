//! Closed-loop simulation of one ego vehicle among scripted traffic.

pub mod collision;
pub mod scenario;
pub mod traffic;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::BarrierKind;
use crate::controller::{ControlEvent, ControlOutput, Controller, ControllerError};
use crate::dynamics::{self, VehicleState};
use crate::fsm::FsmState;

pub use collision::{bodies_overlap, CollisionEvent};
pub use scenario::{build_random, build_typical, Behavior, Environment, Scenario, ScenarioError, StrictTraffic, SurroundingSpec};
pub use traffic::{Traffic, VehicleSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeLabel {
    LaneChangeSuccess,
    StillInCurrentLane,
    QpInfeasible,
    Collision,
}

impl OutcomeLabel {
    pub const ALL: [OutcomeLabel; 4] = [
        OutcomeLabel::LaneChangeSuccess,
        OutcomeLabel::StillInCurrentLane,
        OutcomeLabel::QpInfeasible,
        OutcomeLabel::Collision,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeLabel::LaneChangeSuccess => "lane_change_success",
            OutcomeLabel::StillInCurrentLane => "still_in_current_lane",
            OutcomeLabel::QpInfeasible => "qp_infeasible",
            OutcomeLabel::Collision => "collision",
        }
    }
}

impl std::fmt::Display for OutcomeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("controller failure at t = {t:.2} s: {source}")]
    Controller { t: f64, source: ControllerError },
    #[error("ego state left the valid region at t = {t:.2} s: {state:?}")]
    Sanity { t: f64, state: VehicleState },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub ego: VehicleState,
    pub output: ControlOutput,
    pub others: Vec<VehicleSnapshot>,
}

/// Lowest barrier values seen during a run, per kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MinH {
    pub fc: Option<f64>,
    pub ft: Option<f64>,
    pub bt: Option<f64>,
}

impl MinH {
    pub fn get(&self, kind: BarrierKind) -> Option<f64> {
        match kind {
            BarrierKind::Fc => self.fc,
            BarrierKind::Ft => self.ft,
            BarrierKind::Bt => self.bt,
        }
    }

    pub fn observe(&mut self, kind: BarrierKind, h: f64) {
        let slot = match kind {
            BarrierKind::Fc => &mut self.fc,
            BarrierKind::Ft => &mut self.ft,
            BarrierKind::Bt => &mut self.bt,
        };
        *slot = Some(slot.map_or(h, |m| m.min(h)));
    }

    pub fn merge(&mut self, other: &MinH) {
        for kind in BarrierKind::ALL {
            if let Some(h) = other.get(kind) {
                self.observe(kind, h);
            }
        }
    }

    pub fn overall(&self) -> Option<f64> {
        [self.fc, self.ft, self.bt].into_iter().flatten().reduce(f64::min)
    }
}

/// Deterministic per-run statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub outcome: OutcomeLabel,
    pub steps: usize,
    pub end_time: f64,
    pub success_time: Option<f64>,
    pub collision: Option<CollisionEvent>,
    pub fallback_events: usize,
    pub rejected_probes: usize,
    pub aborts: usize,
    pub switch_checks: usize,
    pub switch_violations: usize,
    pub min_h: MinH,
    pub max_kkt_residual: f64,
    pub max_speed: f64,
    pub min_speed: f64,
    /// Time at which each new FSM state was entered.
    pub state_changes: Vec<(f64, FsmState)>,
}

impl RunSummary {
    pub fn state_sequence(&self) -> Vec<FsmState> {
        self.state_changes.iter().map(|(_, s)| *s).collect()
    }
}

/// Wall-clock cost of the control steps; kept apart from the summary so
/// that summaries stay reproducible.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub control_steps: usize,
    pub total_seconds: f64,
    pub max_step_seconds: f64,
}

impl RunTiming {
    pub fn mean_step_seconds(&self) -> f64 {
        if self.control_steps == 0 {
            0.0
        } else {
            self.total_seconds / self.control_steps as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub summary: RunSummary,
    /// One record per control step; empty when recording was switched off.
    pub rows: Vec<StepRecord>,
    pub final_ego: VehicleState,
    pub final_others: Vec<VehicleSnapshot>,
    #[serde(skip)]
    pub timing: RunTiming,
}

impl SimTrace {
    pub fn outcome(&self) -> OutcomeLabel {
        self.summary.outcome
    }
}

/// Runs a scenario and records every step.
pub fn run(scn: &Scenario) -> Result<SimTrace, SimError> {
    run_with(scn, true)
}

/// Runs a scenario; `record` controls whether per-step rows are kept.
pub fn run_with(scn: &Scenario, record: bool) -> Result<SimTrace, SimError> {
    scn.validate()?;
    let cfg = scn.controller_config();
    let geo = scn.geometry;
    let dt = scn.dt;
    let mut controller = Controller::new(cfg).map_err(|source| SimError::Controller { t: 0.0, source })?;
    let mut traffic = Traffic::new(scn);
    let mut ego = scn.ego.state();

    let mut rows = Vec::new();
    let mut summary = RunSummary {
        scenario: scn.name.clone(),
        seed: scn.seed,
        outcome: OutcomeLabel::StillInCurrentLane,
        steps: 0,
        end_time: 0.0,
        success_time: None,
        collision: None,
        fallback_events: 0,
        rejected_probes: 0,
        aborts: 0,
        switch_checks: 0,
        switch_violations: 0,
        min_h: MinH::default(),
        max_kkt_residual: 0.0,
        max_speed: ego.v,
        min_speed: ego.v,
        state_changes: Vec::new(),
    };
    let mut timing = RunTiming::default();
    let total = scn.steps();

    for k in 0..=total {
        let t = k as f64 * dt;
        summary.end_time = t;
        if let Some(hit) = traffic
            .snapshots()
            .iter()
            .find(|o| collision::bodies_overlap(&ego, o.x, o.y, &geo))
        {
            summary.collision = Some(CollisionEvent { step: k, t, vehicle_id: hit.id });
            break;
        }
        if k == total {
            break;
        }

        traffic.prepare(t, dt, &ego);
        let observed = traffic.observations();
        let started = Instant::now();
        let out = controller
            .control_step(&ego, &observed, scn.command_at(t))
            .map_err(|source| SimError::Controller { t, source })?;
        let elapsed = started.elapsed().as_secs_f64();
        timing.control_steps += 1;
        timing.total_seconds += elapsed;
        timing.max_step_seconds = timing.max_step_seconds.max(elapsed);

        let d = &out.diagnostics;
        summary.steps += 1;
        if summary.state_changes.last().map(|(_, s)| *s) != Some(d.state) {
            summary.state_changes.push((t, d.state));
        }
        for b in &d.barriers {
            summary.min_h.observe(b.kind, b.h);
        }
        if d.qp_status == crate::qp::QpStatus::Optimal {
            summary.max_kkt_residual = summary.max_kkt_residual.max(d.kkt_residual);
        }
        if d.rejection.is_some() {
            summary.rejected_probes += 1;
        }
        if let Some(ok) = d.switch_check {
            summary.switch_checks += 1;
            if !ok {
                summary.switch_violations += 1;
            }
        }
        let mut completed = false;
        for e in &d.events {
            match e {
                ControlEvent::Fallback { .. } => summary.fallback_events += 1,
                ControlEvent::Aborted { .. } => summary.aborts += 1,
                ControlEvent::LaneChangeCompleted { .. } => {
                    completed = true;
                    summary.success_time.get_or_insert(t);
                }
                _ => {}
            }
        }
        let fallback = d.fallback;
        let input = out.input;
        if record {
            rows.push(StepRecord { step: k, t, ego, output: out, others: traffic.snapshots() });
        }
        if fallback || (completed && scn.stop_on_success) {
            break;
        }

        ego = dynamics::step(&ego, &input, dt, &geo);
        traffic.advance(t, dt);
        summary.max_speed = summary.max_speed.max(ego.v);
        summary.min_speed = summary.min_speed.min(ego.v);
        if !(ego.v >= -1e-9 && ego.psi.abs() < std::f64::consts::FRAC_PI_2 && ego.x.is_finite() && ego.y.is_finite()) {
            return Err(SimError::Sanity { t: t + dt, state: ego });
        }
    }

    let mut trace = SimTrace {
        summary,
        rows,
        final_ego: ego,
        final_others: traffic.snapshots(),
        timing,
    };
    trace.summary.outcome = classify_outcome(&trace);
    Ok(trace)
}

/// First step at which the ego body overlaps another vehicle, scanning the
/// recorded rows and the final state.
pub fn collision_check(trace: &SimTrace, geo: &dynamics::VehicleGeometry) -> Option<CollisionEvent> {
    let hit = |ego: &VehicleState, others: &[VehicleSnapshot]| {
        others.iter().find(|o| collision::bodies_overlap(ego, o.x, o.y, geo)).map(|o| o.id)
    };
    for r in &trace.rows {
        if let Some(id) = hit(&r.ego, &r.others) {
            return Some(CollisionEvent { step: r.step, t: r.t, vehicle_id: id });
        }
    }
    hit(&trace.final_ego, &trace.final_others).map(|id| CollisionEvent {
        step: trace.summary.steps,
        t: trace.summary.end_time,
        vehicle_id: id,
    })
}

/// Collision dominates, then any fallback, then success, else the ego
/// never left its lane.
pub fn classify_outcome(trace: &SimTrace) -> OutcomeLabel {
    let s = &trace.summary;
    if s.collision.is_some() {
        OutcomeLabel::Collision
    } else if s.fallback_events > 0 {
        OutcomeLabel::QpInfeasible
    } else if s.success_time.is_some() {
        OutcomeLabel::LaneChangeSuccess
    } else {
        OutcomeLabel::StillInCurrentLane
    }
}
