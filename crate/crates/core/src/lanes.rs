use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleGeometry;

/// Straight lanes parallel to the x axis. Lane 0 is the rightmost, its right
/// edge on `y = 0`; higher indices lie to the left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneLayout {
    pub width: f64,
    pub count: usize,
}

impl LaneLayout {
    pub fn new(width: f64, count: usize) -> Self {
        Self { width, count }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(format!("lane width must be positive, got {}", self.width));
        }
        if self.count == 0 {
            return Err("at least one lane is required".into());
        }
        Ok(())
    }

    pub fn center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.width
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.center(i)).collect()
    }

    /// `(right edge, left edge)` of a lane.
    pub fn bounds(&self, lane: usize) -> (f64, f64) {
        (lane as f64 * self.width, (lane + 1) as f64 * self.width)
    }

    /// Lane containing the lateral coordinate; positions off the road map to
    /// the nearest edge lane.
    pub fn lane_of(&self, y: f64) -> usize {
        let idx = (y / self.width).floor();
        if idx <= 0.0 {
            0
        } else {
            (idx as usize).min(self.count - 1)
        }
    }

    /// Neighbour in the direction of a lane-change command: `+1` is left,
    /// `-1` is right.
    pub fn adjacent(&self, lane: usize, direction: i8) -> Option<usize> {
        match direction {
            1 if lane + 1 < self.count => Some(lane + 1),
            -1 if lane > 0 => Some(lane - 1),
            _ => None,
        }
    }

    /// Whether any part of the body width `[y - w_rc, y + w_lc]` lies inside `lane`.
    pub fn body_overlaps(&self, y: f64, geo: &VehicleGeometry, lane: usize) -> bool {
        let (lo, hi) = self.bounds(lane);
        y + geo.w_lc > lo && y - geo.w_rc < hi
    }

    /// Whether the whole body width `[y - w_rc, y + w_lc]` lies inside `lane`.
    pub fn body_within(&self, y: f64, geo: &VehicleGeometry, lane: usize) -> bool {
        let (lo, hi) = self.bounds(lane);
        y - geo.w_rc >= lo && y + geo.w_lc <= hi
    }
}
