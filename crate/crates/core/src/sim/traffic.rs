//! Surrounding-vehicle motion.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::SurroundingVehicle;
use crate::dynamics::{VehicleGeometry, VehicleState};
use crate::lanes::LaneLayout;
use crate::sim::scenario::{Behavior, Scenario, StrictTraffic};

/// RNG stream used while running; stream 0 belongs to scenario generation.
const RUNTIME_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleSnapshot {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub v: f64,
}

#[derive(Debug, Clone)]
struct Agent {
    id: usize,
    x: f64,
    y: f64,
    v: f64,
    behavior: Behavior,
    /// Acceleration applied over the current step.
    accel: f64,
    lat_speed: f64,
    drawn_accel: f64,
    next_draw: f64,
    y_start: f64,
    y_end: f64,
    /// Time the scripted lane change actually began.
    merge_began: Option<f64>,
}

impl Agent {
    /// Lateral position and speed of the scripted profile at time `t`.
    fn lateral_at(&self, t: f64) -> (f64, f64) {
        let (Behavior::ScriptedLaneChange { duration, .. }, Some(t0)) = (self.behavior, self.merge_began) else {
            return (self.y, 0.0);
        };
        let tau = (t - t0).clamp(0.0, duration);
        let span = self.y_end - self.y_start;
        let y = self.y_start + span * (1.0 - (PI * tau / duration).cos()) / 2.0;
        let moving = t >= t0 && t - t0 < duration;
        let ydot = if moving { span * PI / (2.0 * duration) * (PI * tau / duration).sin() } else { 0.0 };
        (y, ydot)
    }

    fn speed_bounds(&self) -> Option<(f64, f64)> {
        match self.behavior {
            Behavior::RandomAccel { speed_min, speed_max, .. } => Some((speed_min, speed_max)),
            _ => None,
        }
    }
}

/// All surrounding vehicles of one run. Each step is `prepare` (fix the
/// accelerations and lateral speeds the controller will observe), then
/// `advance`.
#[derive(Debug, Clone)]
pub struct Traffic {
    agents: Vec<Agent>,
    rng: ChaCha8Rng,
    lanes: LaneLayout,
    geo: VehicleGeometry,
    strict: Option<StrictTraffic>,
}

impl Traffic {
    pub fn new(scn: &Scenario) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
        rng.set_stream(RUNTIME_STREAM);
        let agents = scn
            .surrounding
            .iter()
            .map(|s| {
                let (y_end, merge_began) = match s.behavior {
                    Behavior::ScriptedLaneChange { target_lane, start_time, .. } => {
                        (scn.lanes.center(target_lane), scn.strict_traffic.is_none().then_some(start_time))
                    }
                    _ => (s.y, None),
                };
                Agent {
                    id: s.id,
                    x: s.x,
                    y: s.y,
                    v: s.v,
                    behavior: s.behavior,
                    accel: 0.0,
                    lat_speed: 0.0,
                    drawn_accel: 0.0,
                    next_draw: 0.0,
                    y_start: s.y,
                    y_end,
                    merge_began,
                }
            })
            .collect();
        Self { agents, rng, lanes: scn.lanes, geo: scn.geometry, strict: scn.strict_traffic }
    }

    /// Decides what every vehicle does over `[t, t + dt)`.
    pub fn prepare(&mut self, t: f64, dt: f64, ego: &VehicleState) {
        for a in &mut self.agents {
            a.accel = 0.0;
            if let Behavior::RandomAccel { accel_min, accel_max, resample_period, .. } = a.behavior {
                if t + 1e-9 >= a.next_draw {
                    a.drawn_accel = self.rng.gen_range(accel_min..=accel_max);
                    a.next_draw += resample_period;
                }
                a.accel = a.drawn_accel;
            }
        }
        if let Some(strict) = self.strict {
            self.start_merges(t, ego, &strict);
            self.cap_followers(&strict, dt, ego);
        }
        for a in &mut self.agents {
            if let Some((lo, hi)) = a.speed_bounds() {
                a.accel = a.accel.clamp((lo - a.v) / dt, (hi - a.v) / dt);
            }
            if a.v + a.accel * dt < 0.0 {
                a.accel = -a.v / dt;
            }
            a.lat_speed = a.lateral_at(t).1;
        }
    }

    /// Strict mode: a scripted lane change begins once its destination slot
    /// stays clear for the whole manoeuvre, at current speeds for the other
    /// vehicles and for any ego acceleration up to `ego_accel`.
    fn start_merges(&mut self, t: f64, ego: &VehicleState, strict: &StrictTraffic) {
        let length = self.geo.length();
        for i in 0..self.agents.len() {
            let a = &self.agents[i];
            let Behavior::ScriptedLaneChange { target_lane, start_time, duration } = a.behavior else { continue };
            if a.merge_began.is_some() || t + 1e-9 < start_time {
                continue;
            }
            let others_clear = self
                .agents
                .iter()
                .filter(|o| o.id != a.id && self.lanes.lane_of(o.y) == target_lane)
                .all(|o| {
                    let dx0 = o.x - a.x;
                    let dx1 = dx0 + (o.v - a.v) * duration;
                    let closest = if dx0.signum() != dx1.signum() { 0.0 } else { dx0.abs().min(dx1.abs()) };
                    closest - length >= strict.merge_clearance
                });
            // the ego may enter the destination lane at any time, so it always counts
            let ego_clear = [-strict.ego_accel, 0.0, strict.ego_accel].iter().all(|&acc| {
                let ahead0 = a.x >= ego.x;
                (0..=40).all(|n| {
                    let tau = duration * f64::from(n) / 40.0;
                    let v_ego = (ego.v + acc * tau).max(0.0);
                    let x_ego = ego.x + 0.5 * (ego.v + v_ego) * tau;
                    let dx = a.x + a.v * tau - x_ego;
                    if (dx >= 0.0) != ahead0 {
                        return false;
                    }
                    let follower_speed = if ahead0 { v_ego } else { a.v };
                    dx.abs() - length >= strict.merge_clearance + strict.ego_headway * follower_speed
                })
            });
            if others_clear && ego_clear {
                self.agents[i].merge_began = Some(t);
            }
        }
    }

    /// Strict mode: followers never close to less than `min_gap` on the
    /// vehicle ahead in their lane, nor inside the headway behind the ego
    /// when its body reaches into their lane.
    fn cap_followers(&mut self, strict: &StrictTraffic, dt: f64, ego: &VehicleState) {
        let length = self.geo.length();
        let lanes: Vec<usize> = self.agents.iter().map(|a| self.lanes.lane_of(a.y)).collect();
        let caps: Vec<Option<f64>> = (0..self.agents.len())
            .map(|i| {
                let me = &self.agents[i];
                let lead = self
                    .agents
                    .iter()
                    .enumerate()
                    .filter(|(j, o)| *j != i && lanes[*j] == lanes[i] && (o.x > me.x || (o.x == me.x && o.id > me.id)))
                    .min_by(|(_, p), (_, q)| p.x.total_cmp(&q.x))
                    .map(|(_, lead)| lead.v + (lead.x - me.x - length - strict.min_gap).max(0.0) / strict.time_gap);
                let behind_ego = ego.x > me.x && self.lanes.body_overlaps(ego.y, &self.geo, lanes[i]);
                let ego_cap = behind_ego.then(|| {
                    let wanted = length + strict.min_gap + strict.ego_headway * me.v;
                    ego.v + (ego.x - me.x - wanted) / strict.time_gap
                });
                match (lead, ego_cap) {
                    (Some(p), Some(q)) => Some(p.min(q)),
                    (p, q) => p.or(q),
                }
            })
            .collect();
        for (a, cap) in self.agents.iter_mut().zip(caps) {
            if let Some(cap) = cap {
                if a.v + a.accel * dt > cap {
                    a.accel = ((cap - a.v) / dt).max(-strict.max_decel).min(a.accel);
                }
            }
        }
    }

    pub fn advance(&mut self, t: f64, dt: f64) {
        for a in &mut self.agents {
            a.x += a.v * dt + 0.5 * a.accel * dt * dt;
            a.v += a.accel * dt;
            if let Some((lo, hi)) = a.speed_bounds() {
                a.v = a.v.clamp(lo, hi);
            }
            a.v = a.v.max(0.0);
            a.y = a.lateral_at(t + dt).0;
        }
    }

    pub fn observations(&self) -> Vec<SurroundingVehicle> {
        self.agents
            .iter()
            .map(|a| SurroundingVehicle {
                id: a.id,
                x: a.x,
                y: a.y,
                v: a.v,
                accel: a.accel,
                lat_speed: a.lat_speed,
                lane: self.lanes.lane_of(a.y),
            })
            .collect()
    }

    pub fn snapshots(&self) -> Vec<VehicleSnapshot> {
        self.agents.iter().map(|a| VehicleSnapshot { id: a.id, x: a.x, y: a.y, v: a.v }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::{build_random, build_typical, Environment};

    #[test]
    fn constant_speed_advances_exactly() {
        let scn = build_typical(1).unwrap();
        let mut traffic = Traffic::new(&scn);
        let ego = scn.ego.state();
        for k in 0..100 {
            let x0 = traffic.snapshots()[0].x;
            traffic.prepare(k as f64 * 0.01, 0.01, &ego);
            traffic.advance(k as f64 * 0.01, 0.01);
            assert_eq!(traffic.snapshots()[0].x, x0 + 22.0 * 0.01);
        }
    }

    #[test]
    fn scripted_profile_ends_in_target_lane() {
        let scn = build_typical(3).unwrap();
        let mut traffic = Traffic::new(&scn);
        let ego = scn.ego.state();
        let mut max_lat: f64 = 0.0;
        for k in 0..500 {
            traffic.prepare(k as f64 * 0.01, 0.01, &ego);
            max_lat = max_lat.max(traffic.observations()[0].lat_speed.abs());
            traffic.advance(k as f64 * 0.01, 0.01);
        }
        let obs = traffic.observations()[0];
        assert_eq!(obs.y, 5.25);
        assert_eq!(obs.lane, 1);
        assert!((max_lat - 3.5 * PI / 8.0).abs() < 1e-3);
    }

    #[test]
    fn random_speeds_stay_in_bounds() {
        let scn = build_random(Environment::Highway, 9);
        let mut traffic = Traffic::new(&scn);
        let ego = scn.ego.state();
        for k in 0..6000 {
            traffic.prepare(k as f64 * 0.01, 0.01, &ego);
            traffic.advance(k as f64 * 0.01, 0.01);
            for s in &traffic.snapshots()[..5] {
                assert!((23.0..=33.33).contains(&s.v), "speed {} out of bounds", s.v);
            }
        }
    }
}
