//! Kinematic bicycle plant, its input-affine approximation, RK4 integration
//! and the physical input-limit rows handed to the QP.

use serde::{Deserialize, Serialize};

use crate::decision;
use crate::qp::{LinearInequality, RowTag};

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;

/// Pose and speed of a vehicle's centre of gravity in the inertial road frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, psi: f64, v: f64) -> Self {
        Self { x, y, psi, v }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.psi, self.v]
    }

    pub fn from_array(s: [f64; 4]) -> Self {
        Self::new(s[0], s[1], s[2], s[3])
    }
}

/// Longitudinal acceleration at the c.g. and slip angle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub a: f64,
    pub beta: f64,
}

impl ControlInput {
    pub fn new(a: f64, beta: f64) -> Self {
        Self { a, beta }
    }
}

/// Axle and body dimensions measured from the c.g., metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleGeometry {
    pub l_f: f64,
    pub l_r: f64,
    pub l_fc: f64,
    pub l_rc: f64,
    pub w_lc: f64,
    pub w_rc: f64,
}

impl Default for VehicleGeometry {
    fn default() -> Self {
        Self {
            l_f: 1.11,
            l_r: 1.74,
            l_fc: 2.15,
            l_rc: 2.77,
            w_lc: 0.93,
            w_rc: 0.93,
        }
    }
}

impl VehicleGeometry {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("l_f", self.l_f),
            ("l_r", self.l_r),
            ("l_fc", self.l_fc),
            ("l_rc", self.l_rc),
            ("w_lc", self.w_lc),
            ("w_rc", self.w_rc),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(format!("geometry {name} must be positive, got {value}"));
            }
        }
        Ok(())
    }

    /// Longitudinal body length subtracted from |x - x_k| in gap measures.
    pub fn length(&self) -> f64 {
        self.l_fc + self.l_rc
    }

    /// Lateral body width subtracted from |y - y_k| in gap measures.
    pub fn width(&self) -> f64 {
        self.w_lc + self.w_rc
    }
}

/// Box limits on the inputs and on lateral acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputLimits {
    pub beta_max: f64,
    pub beta_rate_max: f64,
    pub a_max: f64,
    pub ay_max: f64,
    pub g: f64,
}

impl Default for InputLimits {
    fn default() -> Self {
        Self {
            beta_max: 15f64.to_radians(),
            beta_rate_max: 15f64.to_radians(),
            a_max: 0.3 * GRAVITY,
            ay_max: 0.3 * GRAVITY,
            g: GRAVITY,
        }
    }
}

impl InputLimits {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("beta_max", self.beta_max),
            ("beta_rate_max", self.beta_rate_max),
            ("a_max", self.a_max),
            ("ay_max", self.ay_max),
            ("g", self.g),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(format!("input limit {name} must be positive, got {value}"));
            }
        }
        Ok(())
    }

    /// Closed interval the slip angle may take this step, given the previous
    /// slip angle and the current speed. All box rows of [`input_box`] at once.
    pub fn beta_interval(&self, v: f64, beta_prev: f64, dt: f64, geo: &VehicleGeometry) -> (f64, f64) {
        let mut hi = self.beta_max;
        if v > 0.0 {
            hi = hi.min(self.ay_max * geo.l_r / (v * v));
        }
        let step = self.beta_rate_max * dt;
        let lo = (-hi).max(beta_prev - step);
        let hi = hi.min(beta_prev + step);
        (lo, hi)
    }
}

/// Right-hand side of the nonlinear kinematic bicycle model.
pub fn derivative_nonlinear(s: &VehicleState, u: &ControlInput, geo: &VehicleGeometry) -> [f64; 4] {
    let heading = s.psi + u.beta;
    [
        s.v * heading.cos(),
        s.v * heading.sin(),
        s.v / geo.l_r * u.beta.sin(),
        u.a,
    ]
}

/// Drift vector and input gain of the small-slip affine model.
///
/// Gain columns are ordered `(a, beta)`.
pub fn affine_terms(s: &VehicleState, geo: &VehicleGeometry) -> ([f64; 4], [[f64; 2]; 4]) {
    let (sin_psi, cos_psi) = s.psi.sin_cos();
    let drift = [s.v * cos_psi, s.v * sin_psi, 0.0, 0.0];
    let gain = [
        [0.0, -s.v * sin_psi],
        [0.0, s.v * cos_psi],
        [0.0, s.v / geo.l_r],
        [1.0, 0.0],
    ];
    (drift, gain)
}

/// Evaluates `f(s) + g(s) u` of the affine model.
pub fn derivative_affine(s: &VehicleState, u: &ControlInput, geo: &VehicleGeometry) -> [f64; 4] {
    let (drift, gain) = affine_terms(s, geo);
    let mut out = drift;
    for (row, g) in out.iter_mut().zip(gain.iter()) {
        *row += g[0] * u.a + g[1] * u.beta;
    }
    out
}

/// One classical RK4 step of the nonlinear model with the input held.
pub fn step(s: &VehicleState, u: &ControlInput, dt: f64, geo: &VehicleGeometry) -> VehicleState {
    let f = |state: [f64; 4]| derivative_nonlinear(&VehicleState::from_array(state), u, geo);
    let add = |a: [f64; 4], k: [f64; 4], h: f64| {
        [a[0] + h * k[0], a[1] + h * k[1], a[2] + h * k[2], a[3] + h * k[3]]
    };
    let s0 = s.to_array();
    let k1 = f(s0);
    let k2 = f(add(s0, k1, 0.5 * dt));
    let k3 = f(add(s0, k2, 0.5 * dt));
    let k4 = f(add(s0, k3, dt));
    let mut out = s0;
    for i in 0..4 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    VehicleState::from_array(out)
}

/// Front steering angle that produces the given slip angle.
pub fn steering_from_slip(beta: f64, geo: &VehicleGeometry) -> f64 {
    (beta.tan() * (geo.l_f + geo.l_r) / geo.l_r).atan()
}

/// Slip angle produced by a front steering angle.
pub fn slip_from_steering(delta_f: f64, geo: &VehicleGeometry) -> f64 {
    (geo.l_r / (geo.l_f + geo.l_r) * delta_f.tan()).atan()
}

/// Input box rows over the decision vector: acceleration, slip angle, slip
/// rate against the previously applied slip, and the linearised lateral
/// acceleration `v² β / l_r`.
pub fn input_box(
    s: &VehicleState,
    u_prev: &ControlInput,
    dt: f64,
    lim: &InputLimits,
    geo: &VehicleGeometry,
) -> Vec<LinearInequality> {
    let on = |index: usize, coeff: f64| {
        let mut c = [0.0; decision::DIM];
        c[index] = coeff;
        c.to_vec()
    };
    let rate = lim.beta_rate_max * dt;
    let lat = s.v * s.v / geo.l_r;
    vec![
        LinearInequality::new(on(decision::ACCEL, 1.0), lim.a_max, RowTag::BoxAccelUpper),
        LinearInequality::new(on(decision::ACCEL, -1.0), lim.a_max, RowTag::BoxAccelLower),
        LinearInequality::new(on(decision::BETA, 1.0), lim.beta_max, RowTag::BoxBetaUpper),
        LinearInequality::new(on(decision::BETA, -1.0), lim.beta_max, RowTag::BoxBetaLower),
        LinearInequality::new(on(decision::BETA, 1.0), u_prev.beta + rate, RowTag::BoxBetaRateUpper),
        LinearInequality::new(on(decision::BETA, -1.0), rate - u_prev.beta, RowTag::BoxBetaRateLower),
        LinearInequality::new(on(decision::BETA, lat), lim.ay_max, RowTag::BoxLateralUpper),
        LinearInequality::new(on(decision::BETA, -lat), lim.ay_max, RowTag::BoxLateralLower),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn geo() -> VehicleGeometry {
        VehicleGeometry::default()
    }

    #[test]
    fn straight_line_and_pure_acceleration() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 10.0);
        assert_eq!(derivative_nonlinear(&s, &ControlInput::new(0.0, 0.0), &geo()), [10.0, 0.0, 0.0, 0.0]);
        assert_eq!(derivative_nonlinear(&s, &ControlInput::new(1.0, 0.0), &geo()), [10.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn heading_plus_slip_substitution() {
        let s = VehicleState::new(0.0, 0.0, 0.1, 20.0);
        let d = derivative_nonlinear(&s, &ControlInput::new(0.0, 0.05), &geo());
        assert_relative_eq!(d[0], 20.0 * 0.15f64.cos(), epsilon = 1e-14);
        assert_relative_eq!(d[1], 20.0 * 0.15f64.sin(), epsilon = 1e-14);
        assert_relative_eq!(d[2], 20.0 / 1.74 * 0.05f64.sin(), epsilon = 1e-14);
        assert_eq!(d[3], 0.0);

        // finite-difference a short RK4 trajectory against the same derivative
        let u = ControlInput::new(0.0, 0.05);
        let h = 1e-5;
        let fwd = step(&s, &u, h, &geo()).to_array();
        let s0 = s.to_array();
        for i in 0..4 {
            assert_relative_eq!((fwd[i] - s0[i]) / h, d[i], epsilon = 1e-3);
        }
    }

    #[test]
    fn affine_terms_match_substitution() {
        let (drift, gain) = affine_terms(&VehicleState::new(0.0, 0.0, 0.0, 10.0), &geo());
        assert_eq!(drift, [10.0, 0.0, 0.0, 0.0]);
        assert_eq!(gain[0], [0.0, 0.0]);
        assert_eq!(gain[1], [0.0, 10.0]);
        assert_relative_eq!(gain[2][1], 10.0 / 1.74);
        assert_eq!(gain[3], [1.0, 0.0]);

        let (drift, gain) = affine_terms(&VehicleState::new(5.0, 2.0, 0.0, 0.0), &geo());
        assert_eq!(drift, [0.0; 4]);
        assert!(gain.iter().all(|row| row[1] == 0.0));
    }

    #[test]
    fn uniform_motion_is_exact() {
        let s = step(&VehicleState::new(0.0, 0.0, 0.0, 10.0), &ControlInput::default(), 0.01, &geo());
        assert_relative_eq!(s.x, 0.1, epsilon = 1e-15);
        assert_eq!(s.y, 0.0);
        assert_eq!(s.v, 10.0);
    }

    #[test]
    fn constant_acceleration_closed_form() {
        let s = step(&VehicleState::new(0.0, 0.0, 0.0, 10.0), &ControlInput::new(2.0, 0.0), 0.01, &geo());
        // x = v t + a t² / 2
        assert_relative_eq!(s.x, 0.1001, epsilon = 1e-14);
        assert_relative_eq!(s.v, 10.02, epsilon = 1e-14);
    }

    #[test]
    fn rk4_against_substepped_reference() {
        let u = ControlInput::new(1.0, 0.1);
        let mut coarse = VehicleState::new(0.0, 0.0, 0.0, 20.0);
        let mut fine = coarse;
        for _ in 0..100 {
            coarse = step(&coarse, &u, 0.01, &geo());
            for _ in 0..10 {
                fine = step(&fine, &u, 0.001, &geo());
            }
        }
        let (c, f) = (coarse.to_array(), fine.to_array());
        for i in 0..4 {
            assert!((c[i] - f[i]).abs() < 1e-8, "component {i}: {} vs {}", c[i], f[i]);
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let s = VehicleState::new(0.0, 0.0, 0.05, 15.0);
        let u = ControlInput::new(1.5, 0.2);
        let reference = |dt: f64| {
            let mut r = s;
            let n = 1000;
            for _ in 0..n {
                r = step(&r, &u, dt / n as f64, &geo());
            }
            r.to_array()
        };
        let err = |dt: f64| {
            let a = step(&s, &u, dt, &geo()).to_array();
            let b = reference(dt);
            (0..4).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max)
        };
        // local error is O(dt^5): halving dt cuts it by ~32, well above 16
        let ratio = err(0.2) / err(0.1);
        assert!(ratio > 16.0, "ratio {ratio}");
    }

    #[test]
    fn steering_values() {
        assert_eq!(steering_from_slip(0.0, &geo()), 0.0);
        assert_relative_eq!(steering_from_slip(0.1, &geo()), 0.162_885_282_8, epsilon = 1e-10);
        for beta in [-0.2, -0.01, 0.003, 0.1, 0.26] {
            let delta = steering_from_slip(beta, &geo());
            assert_relative_eq!(slip_from_steering(delta, &geo()), beta, epsilon = 1e-12);
            assert_eq!(steering_from_slip(-beta, &geo()), -delta);
        }
    }

    #[test]
    fn input_box_lateral_rows() {
        let lim = InputLimits::default();
        let rows = input_box(&VehicleState::new(0.0, 0.0, 0.0, 0.0), &ControlInput::default(), 0.01, &lim, &geo());
        let lateral: Vec<_> = rows
            .iter()
            .filter(|r| matches!(r.tag, RowTag::BoxLateralUpper | RowTag::BoxLateralLower))
            .collect();
        assert_eq!(lateral.len(), 2);
        assert!(lateral.iter().all(|r| r.is_vacuous()));

        let (lo, hi) = lim.beta_interval(27.5, 0.0, 1.0, &geo());
        assert_relative_eq!(hi, 2.943 * 1.74 / (27.5 * 27.5), epsilon = 1e-15);
        assert_relative_eq!(hi, 6.77e-3, epsilon = 1e-5);
        assert_relative_eq!(lo, -hi);
        assert_relative_eq!(27.5 * 27.5 * hi / 1.74, 0.3 * GRAVITY, epsilon = 1e-12);
    }

    #[test]
    fn input_box_rate_rows() {
        let lim = InputLimits::default();
        let rows = input_box(&VehicleState::new(0.0, 0.0, 0.0, 5.0), &ControlInput::new(0.0, 0.001), 0.01, &lim, &geo());
        let upper = rows.iter().find(|r| r.tag == RowTag::BoxBetaRateUpper).unwrap();
        let lower = rows.iter().find(|r| r.tag == RowTag::BoxBetaRateLower).unwrap();
        assert_relative_eq!(upper.bound, 0.001 + 0.002618, epsilon = 1e-6);
        assert_relative_eq!(-lower.bound, 0.001 - 0.002618, epsilon = 1e-6);
    }
}
