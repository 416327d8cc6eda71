//! Control Lyapunov and control barrier constraints over the decision vector
//! `(a, beta, delta_v, delta_y, delta_psi)`.
//!
//! Every barrier is split into the part driven by the other vehicle's motion
//! (`dt_term`), the ego drift (`lf_term`) and the ego input gain (`lg_row`),
//! all evaluated on the small-slip affine model. Signs of `|x - x_k|` and
//! `|y - y_k|` are frozen at construction so each row stays linear.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision;
use crate::dynamics::{VehicleGeometry, VehicleState, GRAVITY};
use crate::qp::{LinearInequality, RowTag};

/// Barriers with `h` at or above `-SWITCH_TOL` count as satisfied when a
/// constraint set is switched in.
pub const SWITCH_TOL: f64 = 1e-6;

/// A non-ego vehicle as seen by the controller. All surrounding vehicles
/// have zero heading; `lat_speed` is non-zero only while one changes lanes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurroundingVehicle {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub accel: f64,
    pub lat_speed: f64,
    pub lane: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehiclesOfInterest {
    pub fc: Option<SurroundingVehicle>,
    pub ft: Option<SurroundingVehicle>,
    pub bt: Option<SurroundingVehicle>,
}

/// Bumper-to-bumper and side-to-side distances between two vehicle bodies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapMeasures {
    pub dx: f64,
    pub dy: f64,
}

impl GapMeasures {
    pub fn between(ego: &VehicleState, other: &SurroundingVehicle, geo: &VehicleGeometry) -> Self {
        Self {
            dx: (ego.x - other.x).abs() - geo.length(),
            dy: (ego.y - other.y).abs() - geo.width(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    /// Safety factor scaling the `(1 + epsilon) v` headway.
    pub epsilon: f64,
    pub alpha_v: f64,
    pub alpha_y: f64,
    pub alpha_psi: f64,
    pub gamma_fc: f64,
    pub gamma_ft: f64,
    pub gamma_bt: f64,
    pub p_v: f64,
    pub p_y: f64,
    pub p_psi: f64,
    /// Input cost on `(a, beta)`.
    pub h: [[f64; 2]; 2],
    /// Braking capability assumed in the closing-speed terms.
    pub a_l: f64,
    pub v_d: f64,
    pub v_l: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            alpha_v: 1.7,
            alpha_y: 0.8,
            alpha_psi: 12.0,
            gamma_fc: 1.0,
            gamma_ft: 1.0,
            gamma_bt: 1.0,
            p_v: 0.1,
            p_y: 15.0,
            p_psi: 400.0,
            h: [[0.01, 0.0], [0.0, 0.0]],
            a_l: 0.3 * GRAVITY,
            v_d: 27.5,
            v_l: 33.33,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.1..=1.0).contains(&self.epsilon) {
            return Err(format!("epsilon must lie in [0.1, 1], got {}", self.epsilon));
        }
        let positive = [
            ("alpha_v", self.alpha_v),
            ("alpha_y", self.alpha_y),
            ("alpha_psi", self.alpha_psi),
            ("gamma_fc", self.gamma_fc),
            ("gamma_ft", self.gamma_ft),
            ("gamma_bt", self.gamma_bt),
            ("p_v", self.p_v),
            ("p_y", self.p_y),
            ("p_psi", self.p_psi),
            ("a_l", self.a_l),
            ("v_d", self.v_d),
            ("v_l", self.v_l),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(format!("{name} must be positive, got {value}"));
            }
        }
        let [[h11, h12], [h21, h22]] = self.h;
        if h12 != h21 {
            return Err("input cost H must be symmetric".into());
        }
        if h11 < 0.0 || h22 < 0.0 || h11 * h22 - h12 * h21 < 0.0 {
            return Err("input cost H must be positive semidefinite".into());
        }
        Ok(())
    }

    pub fn gamma(&self, kind: BarrierKind) -> f64 {
        match kind {
            BarrierKind::Fc => self.gamma_fc,
            BarrierKind::Ft => self.gamma_ft,
            BarrierKind::Bt => self.gamma_bt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    Fc,
    Ft,
    Bt,
}

impl BarrierKind {
    pub const ALL: [BarrierKind; 3] = [BarrierKind::Fc, BarrierKind::Ft, BarrierKind::Bt];

    pub fn tag(self) -> RowTag {
        match self {
            BarrierKind::Fc => RowTag::CbfFc,
            BarrierKind::Ft => RowTag::CbfFt,
            BarrierKind::Bt => RowTag::CbfBt,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BarrierKind::Fc => "fc",
            BarrierKind::Ft => "ft",
            BarrierKind::Bt => "bt",
        }
    }
}

impl fmt::Display for BarrierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which barrier family is in force.
///
/// `Following` keeps a `(1 + epsilon) v` headway to the vehicle being
/// followed (cruise and lane-change states). `Returning` is used while
/// driving back to the original lane and trades the headway for a
/// longitudinal or lateral clearance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    Following,
    Returning,
}

/// Piecewise case of a barrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// The follower is at least as fast as the leader: braking distance counts.
    Closing,
    /// The gap is opening; plain distance term.
    Opening,
    /// Longitudinal overlap; lateral clearance only.
    Lateral,
}

impl Branch {
    pub fn is_lateral(self) -> bool {
        self == Branch::Lateral
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierEvaluation {
    pub kind: BarrierKind,
    pub vehicle_id: usize,
    pub formulation: Formulation,
    pub branch: Branch,
    pub h: f64,
    pub dt_term: f64,
    pub lf_term: f64,
    /// Coefficients on `(a, beta)`.
    pub lg_row: [f64; 2],
}

impl BarrierEvaluation {
    /// Time derivative of `h` under the input `(a, beta)`.
    pub fn rate(&self, a: f64, beta: f64) -> f64 {
        self.dt_term + self.lf_term + self.lg_row[0] * a + self.lg_row[1] * beta
    }

    /// `dt + Lf h + Lg h u >= -gamma h` written as a `<=` row.
    pub fn to_row(&self, gamma: f64) -> LinearInequality {
        let mut coeffs = vec![0.0; decision::DIM];
        coeffs[decision::ACCEL] = -self.lg_row[0];
        coeffs[decision::BETA] = -self.lg_row[1];
        LinearInequality::new(coeffs, self.dt_term + self.lf_term + gamma * self.h, self.kind.tag())
    }

    /// Slack of the barrier condition at `(a, beta)`; non-negative when met.
    pub fn condition_residual(&self, gamma: f64, a: f64, beta: f64) -> f64 {
        self.rate(a, beta) + gamma * self.h
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BarrierError {
    #[error("vehicle {id} is not ahead of the ego vehicle (x_k = {x_k}, x = {x})")]
    NotAhead { id: usize, x_k: f64, x: f64 },
}

/// Value and Lie derivatives of one Lyapunov function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClfEvaluation {
    pub tag: RowTag,
    pub value: f64,
    pub lf_term: f64,
    pub lg_row: [f64; 2],
}

impl ClfEvaluation {
    fn slack_index(&self) -> usize {
        match self.tag {
            RowTag::ClfV => decision::SLACK_V,
            RowTag::ClfY => decision::SLACK_Y,
            _ => decision::SLACK_PSI,
        }
    }

    pub fn rate(&self, a: f64, beta: f64) -> f64 {
        self.lf_term + self.lg_row[0] * a + self.lg_row[1] * beta
    }

    /// `Lf V + Lg V u <= -alpha V + delta`.
    pub fn to_row(&self, alpha: f64) -> LinearInequality {
        let mut coeffs = vec![0.0; decision::DIM];
        coeffs[decision::ACCEL] = self.lg_row[0];
        coeffs[decision::BETA] = self.lg_row[1];
        coeffs[self.slack_index()] = -1.0;
        LinearInequality::new(coeffs, -alpha * self.value - self.lf_term, self.tag)
    }
}

/// Speed, lateral-position and heading Lyapunov functions.
pub fn clf_evaluations(
    s: &VehicleState,
    geo: &VehicleGeometry,
    y_target: f64,
    v_desired: f64,
) -> [ClfEvaluation; 3] {
    let (sin_psi, cos_psi) = s.psi.sin_cos();
    let ev = s.v - v_desired;
    let ey = s.y - y_target;
    [
        ClfEvaluation {
            tag: RowTag::ClfV,
            value: ev * ev,
            lf_term: 0.0,
            lg_row: [2.0 * ev, 0.0],
        },
        ClfEvaluation {
            tag: RowTag::ClfY,
            value: ey * ey,
            lf_term: 2.0 * ey * s.v * sin_psi,
            lg_row: [0.0, 2.0 * ey * s.v * cos_psi],
        },
        ClfEvaluation {
            tag: RowTag::ClfPsi,
            value: s.psi * s.psi,
            lf_term: 0.0,
            lg_row: [0.0, 2.0 * s.psi * s.v / geo.l_r],
        },
    ]
}

/// The three CLF rows for tracking `v_desired` and the lane centre `y_target`.
pub fn clf_rows(
    s: &VehicleState,
    gains: &ControllerGains,
    geo: &VehicleGeometry,
    y_target: f64,
    v_desired: f64,
) -> ([LinearInequality; 3], [f64; 3]) {
    let [ev, ey, epsi] = clf_evaluations(s, geo, y_target, v_desired);
    (
        [ev.to_row(gains.alpha_v), ey.to_row(gains.alpha_y), epsi.to_row(gains.alpha_psi)],
        [ev.value, ey.value, epsi.value],
    )
}

/// Evaluates the barrier of `kind` under `formulation` together with the
/// pieces of its time derivative.
pub fn evaluate(
    kind: BarrierKind,
    formulation: Formulation,
    s: &VehicleState,
    other: &SurroundingVehicle,
    gains: &ControllerGains,
    geo: &VehicleGeometry,
) -> BarrierEvaluation {
    let (sin_psi, cos_psi) = s.psi.sin_cos();
    let gap = GapMeasures::between(s, other, geo);
    let closing_sq = (other.v - s.v) * (other.v - s.v) / (2.0 * gains.a_l);

    let mut out = BarrierEvaluation {
        kind,
        vehicle_id: other.id,
        formulation,
        branch: Branch::Opening,
        h: 0.0,
        dt_term: 0.0,
        lf_term: 0.0,
        lg_row: [0.0, 0.0],
    };

    // d(dx)/dt = sx (v_k - x_dot), x_dot = v cos(psi) - v sin(psi) beta
    let add_longitudinal = |e: &mut BarrierEvaluation| {
        let sx = if other.x >= s.x { 1.0 } else { -1.0 };
        e.h += gap.dx;
        e.dt_term += sx * other.v;
        e.lf_term -= sx * s.v * cos_psi;
        e.lg_row[1] += sx * s.v * sin_psi;
    };
    // d(dy)/dt = sy (y_dot - y_dot_k), y_dot = v sin(psi) + v cos(psi) beta
    let add_lateral = |e: &mut BarrierEvaluation| {
        let sy = if s.y >= other.y { 1.0 } else { -1.0 };
        e.h += gap.dy;
        e.dt_term -= sy * other.lat_speed;
        e.lf_term += sy * s.v * sin_psi;
        e.lg_row[1] += sy * s.v * cos_psi;
    };
    // -(v_k - v)^2 / (2 a_l)
    let add_braking = |e: &mut BarrierEvaluation| {
        e.h -= closing_sq;
        e.dt_term -= (other.v - s.v) * other.accel / gains.a_l;
        e.lg_row[0] += (other.v - s.v) / gains.a_l;
    };
    let ego_headway = |e: &mut BarrierEvaluation| {
        e.h -= (1.0 + gains.epsilon) * s.v;
        e.lg_row[0] -= 1.0 + gains.epsilon;
    };
    let other_headway = |e: &mut BarrierEvaluation| {
        e.h -= (1.0 + gains.epsilon) * other.v;
        e.dt_term -= (1.0 + gains.epsilon) * other.accel;
    };

    // which vehicle follows: the ego for fc/ft, the other one for bt
    let ego_follows = kind != BarrierKind::Bt;
    let closing = if ego_follows { s.v >= other.v } else { other.v >= s.v };
    out.branch = if closing { Branch::Closing } else { Branch::Opening };

    match (formulation, kind) {
        (Formulation::Following, _) | (Formulation::Returning, BarrierKind::Fc) => {
            add_longitudinal(&mut out);
            if ego_follows {
                ego_headway(&mut out);
            } else {
                other_headway(&mut out);
            }
            if closing {
                add_braking(&mut out);
            }
        }
        (Formulation::Returning, _) => {
            if gap.dx >= 0.0 {
                add_longitudinal(&mut out);
                if closing {
                    add_braking(&mut out);
                }
            } else {
                out.branch = Branch::Lateral;
                add_lateral(&mut out);
                let floor = if kind == BarrierKind::Ft { 0.1 * gains.epsilon } else { gains.epsilon };
                out.h -= floor;
            }
        }
    }
    out
}

/// Cruise barrier on the vehicle ahead in the current lane.
pub fn cbf_acc(
    s: &VehicleState,
    fc: &SurroundingVehicle,
    gains: &ControllerGains,
    geo: &VehicleGeometry,
) -> Result<BarrierEvaluation, BarrierError> {
    if fc.x < s.x {
        return Err(BarrierError::NotAhead { id: fc.id, x_k: fc.x, x: s.x });
    }
    Ok(evaluate(BarrierKind::Fc, Formulation::Following, s, fc, gains, geo))
}

/// Lane-change barriers. Once the ego body is entirely inside the target
/// lane only the front-target barrier remains.
pub fn cbf_lane_change(
    s: &VehicleState,
    voi: &VehiclesOfInterest,
    gains: &ControllerGains,
    geo: &VehicleGeometry,
    ego_fully_in_target: bool,
) -> Vec<BarrierEvaluation> {
    let mut out = Vec::with_capacity(3);
    if !ego_fully_in_target {
        if let Some(fc) = &voi.fc {
            out.push(evaluate(BarrierKind::Fc, Formulation::Following, s, fc, gains, geo));
        }
    }
    if let Some(ft) = &voi.ft {
        out.push(evaluate(BarrierKind::Ft, Formulation::Following, s, ft, gains, geo));
    }
    if !ego_fully_in_target {
        if let Some(bt) = &voi.bt {
            out.push(evaluate(BarrierKind::Bt, Formulation::Following, s, bt, gains, geo));
        }
    }
    out
}

/// Barriers used while returning to the original lane.
pub fn cbf_back(
    s: &VehicleState,
    voi: &VehiclesOfInterest,
    gains: &ControllerGains,
    geo: &VehicleGeometry,
) -> Vec<BarrierEvaluation> {
    let pairs = [
        (BarrierKind::Fc, voi.fc),
        (BarrierKind::Ft, voi.ft),
        (BarrierKind::Bt, voi.bt),
    ];
    pairs
        .into_iter()
        .filter_map(|(kind, other)| other.map(|o| evaluate(kind, Formulation::Returning, s, &o, gains, geo)))
        .collect()
}

/// Value of the active branch only.
pub fn barrier_value(
    kind: BarrierKind,
    formulation: Formulation,
    s: &VehicleState,
    other: &SurroundingVehicle,
    gains: &ControllerGains,
    geo: &VehicleGeometry,
) -> f64 {
    evaluate(kind, formulation, s, other, gains, geo).h
}

/// True when the state lies in the safe set of every barrier being switched in.
pub fn switch_safety_check(new_rows: &[BarrierEvaluation]) -> bool {
    new_rows.iter().all(|b| b.h >= -SWITCH_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vehicle(id: usize, x: f64, y: f64, v: f64) -> SurroundingVehicle {
        SurroundingVehicle { id, x, y, v, accel: 0.0, lat_speed: 0.0, lane: 0 }
    }

    fn setup() -> (ControllerGains, VehicleGeometry) {
        (ControllerGains::default(), VehicleGeometry::default())
    }

    #[test]
    fn clf_rows_vanish_at_equilibrium() {
        let (gains, geo) = setup();
        let s = VehicleState::new(0.0, 1.75, 0.0, 27.5);
        let (rows, values) = clf_rows(&s, &gains, &geo, 1.75, 27.5);
        assert_eq!(values, [0.0; 3]);
        for row in rows {
            // 0 <= delta_j
            assert_eq!(row.bound, 0.0);
            assert_eq!(row.coeffs[decision::ACCEL], 0.0);
            assert_eq!(row.coeffs[decision::BETA], 0.0);
        }
    }

    #[test]
    fn speed_clf_row_substitution() {
        let (gains, geo) = setup();
        let s = VehicleState::new(0.0, 1.75, 0.0, 27.5);
        let (rows, _) = clf_rows(&s, &gains, &geo, 1.75, 25.0);
        // 5 a + 1.7 * 6.25 <= delta_v
        assert_relative_eq!(rows[0].coeffs[decision::ACCEL], 5.0);
        assert_eq!(rows[0].coeffs[decision::SLACK_V], -1.0);
        assert_relative_eq!(rows[0].bound, -1.7 * 6.25);
    }

    #[test]
    fn acc_barrier_at_first_scenario_start() {
        let (gains, geo) = setup();
        let s = VehicleState::new(0.0, 1.75, 0.0, 27.5);
        let fc = vehicle(1, 55.0, 1.75, 22.0);
        let eval = cbf_acc(&s, &fc, &gains, &geo).unwrap();
        assert_eq!(eval.branch, Branch::Closing);
        assert_relative_eq!(GapMeasures::between(&s, &fc, &geo).dx, 50.08, epsilon = 1e-12);
        let expected = 50.08 - 41.25 - 5.5 * 5.5 / (2.0 * 2.943);
        assert_relative_eq!(eval.h, expected, epsilon = 1e-12);
        assert_relative_eq!(eval.h, 3.691, epsilon = 1e-3);
    }

    #[test]
    fn acc_barrier_requires_vehicle_ahead() {
        let (gains, geo) = setup();
        let s = VehicleState::new(10.0, 1.75, 0.0, 27.5);
        let behind = vehicle(1, 5.0, 1.75, 22.0);
        assert!(matches!(cbf_acc(&s, &behind, &gains, &geo), Err(BarrierError::NotAhead { .. })));
    }

    #[test]
    fn acc_barrier_is_continuous_in_speed() {
        let (gains, geo) = setup();
        let fc = vehicle(1, 60.0, 1.75, 22.0);
        let at = VehicleState::new(0.0, 1.75, 0.0, 22.0);
        let h = barrier_value(BarrierKind::Fc, Formulation::Following, &at, &fc, &gains, &geo);
        let below = VehicleState { v: 22.0 - 1e-12, ..at };
        let h_below = barrier_value(BarrierKind::Fc, Formulation::Following, &below, &fc, &gains, &geo);
        assert!((h - h_below).abs() < 1e-10);
    }

    #[test]
    fn approaching_target_lane_vehicle_violates_lane_change_barrier() {
        let (gains, geo) = setup();
        let s = VehicleState::new(0.0, 1.75, 0.0, 27.5);
        let voi = VehiclesOfInterest { bt: Some(vehicle(2, -15.0, 5.25, 19.0)), ..Default::default() };
        let evals = cbf_lane_change(&s, &voi, &gains, &geo, false);
        assert_eq!(evals.len(), 1);
        assert_eq!(evals[0].branch, Branch::Opening);
        assert_relative_eq!(evals[0].h, 15.0 - 4.92 - 1.5 * 19.0, epsilon = 1e-12);
        assert_relative_eq!(evals[0].h, -18.42, epsilon = 1e-9);
        // a row with zero input authority and a negative bound
        let row = evals[0].to_row(gains.gamma_bt);
        assert!(row.is_zero());
        assert!(row.bound < 0.0);
    }

    #[test]
    fn faster_front_target_vehicle_uses_headway_only() {
        let (gains, geo) = setup();
        let s = VehicleState::new(0.0, 1.75, 0.0, 27.5);
        let ft = vehicle(3, 3.0, 8.75, 33.0);
        let voi = VehiclesOfInterest { ft: Some(ft), ..Default::default() };
        let evals = cbf_lane_change(&s, &voi, &gains, &geo, false);
        assert_eq!(evals[0].branch, Branch::Opening);
        let dx = GapMeasures::between(&s, &ft, &geo).dx;
        assert_relative_eq!(evals[0].h, dx - 1.5 * 27.5, epsilon = 1e-12);
    }

    #[test]
    fn lane_change_drops_fc_and_bt_once_in_target() {
        let (gains, geo) = setup();
        let s = VehicleState::new(0.0, 5.25, 0.0, 27.5);
        let voi = VehiclesOfInterest {
            fc: Some(vehicle(1, 80.0, 1.75, 20.0)),
            ft: Some(vehicle(2, 90.0, 5.25, 20.0)),
            bt: Some(vehicle(3, -60.0, 5.25, 20.0)),
        };
        assert_eq!(cbf_lane_change(&s, &voi, &gains, &geo, false).len(), 3);
        let kept = cbf_lane_change(&s, &voi, &gains, &geo, true);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].kind, BarrierKind::Ft);
        assert!(cbf_lane_change(&s, &VehiclesOfInterest::default(), &gains, &geo, false).is_empty());
    }

    #[test]
    fn returning_lateral_branch_substitution() {
        let (gains, geo) = setup();
        let s = VehicleState::new(0.0, 1.75, 0.0, 27.5);
        let voi = VehiclesOfInterest { bt: Some(vehicle(4, -1.0, 5.25, 27.0)), ..Default::default() };
        let evals = cbf_back(&s, &voi, &gains, &geo);
        assert_eq!(evals[0].branch, Branch::Lateral);
        assert_relative_eq!(GapMeasures::between(&s, &voi.bt.unwrap(), &geo).dy, 1.64, epsilon = 1e-12);
        assert_relative_eq!(evals[0].h, 1.14, epsilon = 1e-12);

        let voi = VehiclesOfInterest { ft: Some(vehicle(5, 1.0, 5.25, 27.0)), ..Default::default() };
        let evals = cbf_back(&s, &voi, &gains, &geo);
        assert_relative_eq!(evals[0].h, 1.64 - 0.05, epsilon = 1e-12);
    }

    #[test]
    fn returning_longitudinal_branches_meet_at_equal_speed() {
        let (gains, geo) = setup();
        let ft = vehicle(5, 40.0, 5.25, 25.0);
        let at = VehicleState::new(0.0, 1.75, 0.0, 25.0);
        let below = VehicleState { v: 25.0 - 1e-13, ..at };
        let a = evaluate(BarrierKind::Ft, Formulation::Returning, &at, &ft, &gains, &geo);
        let b = evaluate(BarrierKind::Ft, Formulation::Returning, &below, &ft, &gains, &geo);
        assert_eq!(a.branch, Branch::Closing);
        assert_eq!(b.branch, Branch::Opening);
        assert!((a.h - b.h).abs() < 1e-12);
    }

    #[test]
    fn barrier_row_encodes_condition() {
        let (gains, geo) = setup();
        let s = VehicleState::new(0.0, 2.0, 0.02, 26.0);
        let mut fc = vehicle(1, 45.0, 1.75, 22.0);
        fc.accel = -0.7;
        let eval = cbf_acc(&s, &fc, &gains, &geo).unwrap();
        let row = eval.to_row(gains.gamma_fc);
        for (a, beta) in [(-1.0, 0.003), (0.5, -0.002), (0.0, 0.0)] {
            let z = [a, beta, 0.0, 0.0, 0.0];
            let satisfied = row.violation(&z) <= 0.0;
            assert_eq!(satisfied, eval.condition_residual(gains.gamma_fc, a, beta) >= 0.0);
            assert_relative_eq!(-row.violation(&z), eval.condition_residual(gains.gamma_fc, a, beta), epsilon = 1e-12);
        }
    }

    #[test]
    fn switch_check_definition() {
        assert!(switch_safety_check(&[]));
        let (gains, geo) = setup();
        let s = VehicleState::new(0.0, 1.75, 0.0, 27.5);
        let mut eval = cbf_acc(&s, &vehicle(1, 55.0, 1.75, 22.0), &gains, &geo).unwrap();
        assert!(switch_safety_check(&[eval]));
        eval.h = -0.1;
        assert!(!switch_safety_check(&[eval]));
    }

    #[test]
    fn gains_validation() {
        assert!(ControllerGains::default().validate().is_ok());
        let bad = ControllerGains { gamma_fc: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ControllerGains { epsilon: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
