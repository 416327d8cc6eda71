//! Body overlap between the (rotated) ego rectangle and axis-aligned
//! surrounding vehicles.

use serde::{Deserialize, Serialize};

use crate::dynamics::{VehicleGeometry, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub step: usize,
    pub t: f64,
    pub vehicle_id: usize,
}

/// Corners of the ego body, counter-clockwise from rear right.
pub fn ego_corners(s: &VehicleState, geo: &VehicleGeometry) -> [[f64; 2]; 4] {
    let (sin, cos) = s.psi.sin_cos();
    let local = [[-geo.l_rc, -geo.w_rc], [geo.l_fc, -geo.w_rc], [geo.l_fc, geo.w_lc], [-geo.l_rc, geo.w_lc]];
    local.map(|[u, w]| [s.x + u * cos - w * sin, s.y + u * sin + w * cos])
}

pub fn other_corners(x: f64, y: f64, geo: &VehicleGeometry) -> [[f64; 2]; 4] {
    [
        [x - geo.l_rc, y - geo.w_rc],
        [x + geo.l_fc, y - geo.w_rc],
        [x + geo.l_fc, y + geo.w_lc],
        [x - geo.l_rc, y + geo.w_lc],
    ]
}

fn projection(corners: &[[f64; 2]; 4], axis: [f64; 2]) -> (f64, f64) {
    corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        let d = c[0] * axis[0] + c[1] * axis[1];
        (lo.min(d), hi.max(d))
    })
}

/// Separating-axis test. Touching bodies do not count as overlapping.
pub fn bodies_overlap(ego: &VehicleState, other_x: f64, other_y: f64, geo: &VehicleGeometry) -> bool {
    separation(ego, other_x, other_y, geo) < 0.0
}

/// Largest projected gap over the four candidate axes: positive when the
/// bodies are apart, zero when touching, minus the penetration depth when
/// they overlap.
pub fn separation(ego: &VehicleState, other_x: f64, other_y: f64, geo: &VehicleGeometry) -> f64 {
    let a = ego_corners(ego, geo);
    let b = other_corners(other_x, other_y, geo);
    let (sin, cos) = ego.psi.sin_cos();
    let axes = [[1.0, 0.0], [0.0, 1.0], [cos, sin], [-sin, cos]];
    axes.iter()
        .map(|&axis| {
            let (alo, ahi) = projection(&a, axis);
            let (blo, bhi) = projection(&b, axis);
            (blo - ahi).max(alo - bhi)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
