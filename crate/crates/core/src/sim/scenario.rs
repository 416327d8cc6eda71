use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::ControllerGains;
use crate::controller::ControllerConfig;
use crate::dynamics::{InputLimits, VehicleGeometry, VehicleState};
use crate::lanes::LaneLayout;

/// Duration of a scripted lane change.
pub const SCRIPTED_CHANGE_TIME: f64 = 4.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown typical scenario {0}; expected 1, 2 or 3")]
    UnknownTypical(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot parse scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot write scenario file: {0}")]
    Serialize(#[from] toml::ser::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    Urban,
    Highway,
}

impl Environment {
    pub fn as_str(self) -> &'static str {
        match self {
            Environment::Urban => "urban",
            Environment::Highway => "highway",
        }
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Environment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "urban" => Ok(Environment::Urban),
            "highway" => Ok(Environment::Highway),
            other => Err(format!("unknown environment {other:?}; expected urban or highway")),
        }
    }
}

/// How a surrounding vehicle moves. None of them react to the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Behavior {
    ConstantSpeed,
    /// Piecewise-constant acceleration drawn uniformly from
    /// `[accel_min, accel_max]` every `resample_period` seconds and
    /// saturated so the speed stays in `[speed_min, speed_max]`.
    RandomAccel {
        accel_min: f64,
        accel_max: f64,
        speed_min: f64,
        speed_max: f64,
        resample_period: f64,
    },
    /// Constant longitudinal speed with a smooth lateral move to the centre
    /// of `target_lane`, starting at `start_time` and taking `duration`.
    ScriptedLaneChange {
        target_lane: usize,
        start_time: f64,
        duration: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurroundingSpec {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub behavior: Behavior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoSpec {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub lane: usize,
    pub target_lane: usize,
}

impl EgoSpec {
    pub fn state(&self) -> VehicleState {
        VehicleState::new(self.x, self.y, self.psi, self.v)
    }
}

/// Lane-change command `c` taking effect from time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandEntry {
    pub t: f64,
    pub c: i8,
}

/// No-overlap traffic. Followers are slowed so they never close to less
/// than `min_gap` on the vehicle ahead, or to less than `min_gap` plus
/// `ego_headway` seconds behind the ego. Scripted lane changes wait until
/// the destination slot stays clear, including the ego's headway, for the
/// whole manoeuvre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrictTraffic {
    pub min_gap: f64,
    /// Relaxation time of the follower speed cap.
    pub time_gap: f64,
    pub ego_headway: f64,
    pub max_decel: f64,
    pub merge_clearance: f64,
    /// Ego acceleration magnitude assumed when predicting a merge slot.
    pub ego_accel: f64,
}

impl Default for StrictTraffic {
    fn default() -> Self {
        Self { min_gap: 2.0, time_gap: 2.0, ego_headway: 1.5, max_decel: 9.0, merge_clearance: 10.0, ego_accel: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub dt: f64,
    pub duration: f64,
    /// End the run as soon as the lane change has been completed.
    #[serde(default)]
    pub stop_on_success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strict_traffic: Option<StrictTraffic>,
    pub lanes: LaneLayout,
    pub ego: EgoSpec,
    pub geometry: VehicleGeometry,
    pub limits: InputLimits,
    pub gains: ControllerGains,
    pub commands: Vec<CommandEntry>,
    #[serde(default)]
    pub surrounding: Vec<SurroundingSpec>,
}

impl Scenario {
    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig {
            geometry: self.geometry,
            limits: self.limits,
            gains: self.gains,
            lanes: self.lanes,
            dt: self.dt,
        }
    }

    /// Command in force at time `t`.
    pub fn command_at(&self, t: f64) -> i8 {
        self.commands
            .iter()
            .take_while(|e| e.t <= t + 1e-9)
            .last()
            .map_or(0, |e| e.c)
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        self.controller_config().validate().map_err(ScenarioError::Invalid)?;
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        let ego = &self.ego;
        if ego.lane >= self.lanes.count || ego.target_lane >= self.lanes.count {
            return bad("ego lane index out of range".into());
        }
        if !(ego.v >= 0.0 && ego.psi.abs() < std::f64::consts::FRAC_PI_2) {
            return bad("ego needs v >= 0 and |psi| < pi/2".into());
        }
        for e in &self.commands {
            if !(-1..=1).contains(&e.c) || !e.t.is_finite() {
                return bad(format!("bad command entry at t = {}: c = {}", e.t, e.c));
            }
        }
        if self.commands.windows(2).any(|w| w[1].t < w[0].t) {
            return bad("command entries must be sorted by time".into());
        }
        let mut ids: Vec<usize> = self.surrounding.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("surrounding vehicle ids must be unique".into());
        }
        for s in &self.surrounding {
            if !(s.x.is_finite() && s.y.is_finite() && s.v.is_finite() && s.v >= 0.0) {
                return bad(format!("vehicle {} has an invalid initial state", s.id));
            }
            match s.behavior {
                Behavior::ConstantSpeed => {}
                Behavior::RandomAccel { accel_min, accel_max, speed_min, speed_max, resample_period } => {
                    if !(accel_min <= accel_max && speed_min <= speed_max && resample_period > 0.0 && speed_min >= 0.0) {
                        return bad(format!("vehicle {} has inconsistent random-acceleration bounds", s.id));
                    }
                    if s.v < speed_min || s.v > speed_max {
                        return bad(format!("vehicle {} starts outside its speed bounds", s.id));
                    }
                }
                Behavior::ScriptedLaneChange { target_lane, start_time, duration } => {
                    if target_lane >= self.lanes.count || !(duration > 0.0) || !start_time.is_finite() {
                        return bad(format!("vehicle {} has an invalid scripted lane change", s.id));
                    }
                }
            }
        }
        let boxes: Vec<(f64, f64)> = std::iter::once((ego.x, ego.y))
            .chain(self.surrounding.iter().map(|s| (s.x, s.y)))
            .collect();
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                if bodies_overlap(boxes[i], boxes[j], &self.geometry, 0.0) {
                    return bad("initial vehicle placements overlap".into());
                }
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let scn: Scenario = toml::from_str(text)?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string(self)?)
    }
}

/// Axis-aligned body overlap with an extra longitudinal margin.
fn bodies_overlap(a: (f64, f64), b: (f64, f64), geo: &VehicleGeometry, margin: f64) -> bool {
    (a.0 - b.0).abs() < geo.length() + margin && (a.1 - b.1).abs() < geo.width()
}

fn base(name: &str, lanes: LaneLayout, ego: EgoSpec, gains: ControllerGains) -> Scenario {
    Scenario {
        name: name.to_string(),
        seed: 0,
        dt: 0.01,
        duration: 30.0,
        stop_on_success: false,
        strict_traffic: None,
        lanes,
        ego,
        geometry: VehicleGeometry::default(),
        limits: InputLimits::default(),
        gains,
        commands: vec![CommandEntry { t: 0.0, c: 1 }],
        surrounding: Vec::new(),
    }
}

/// One of the three hand-built scenarios on a 3.5 m three-lane road: a slow
/// leader ahead (1), a slow vehicle behind in the target lane (2), and a
/// vehicle cutting into the same target lane from the far lane (3).
pub fn build_typical(n: u32) -> Result<Scenario, ScenarioError> {
    let lanes = LaneLayout::new(3.5, 3);
    let ego = EgoSpec { x: 0.0, y: 1.75, psi: 0.0, v: 27.5, lane: 0, target_lane: 1 };
    let mut scn = base(&format!("typical-{n}"), lanes, ego, ControllerGains::default());
    let other = match n {
        1 => SurroundingSpec { id: 1, x: 55.0, y: 1.75, v: 22.0, behavior: Behavior::ConstantSpeed },
        2 => SurroundingSpec { id: 1, x: -15.0, y: 5.25, v: 19.0, behavior: Behavior::ConstantSpeed },
        3 => SurroundingSpec {
            id: 1,
            x: 3.0,
            y: 8.75,
            v: 33.0,
            behavior: Behavior::ScriptedLaneChange { target_lane: 1, start_time: 0.0, duration: SCRIPTED_CHANGE_TIME },
        },
        _ => return Err(ScenarioError::UnknownTypical(n)),
    };
    scn.surrounding.push(other);
    Ok(scn)
}

/// Per-environment constants of the random tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomEnvironment {
    pub lane_width: f64,
    pub ego_speed: f64,
    pub speed_limit: f64,
    pub leader_x: (f64, f64),
    pub others_x: (f64, f64),
    pub initial_speed: (f64, f64),
    pub accel: (f64, f64),
    pub speed_bounds: (f64, f64),
    pub merge_start: (f64, f64),
    pub duration: f64,
}

impl RandomEnvironment {
    pub fn of(env: Environment) -> Self {
        match env {
            Environment::Urban => Self {
                lane_width: 3.0,
                ego_speed: 13.0,
                speed_limit: 16.67,
                leader_x: (25.0, 40.0),
                others_x: (-50.0, 50.0),
                initial_speed: (11.0, 15.0),
                accel: (-2.0, 2.0),
                speed_bounds: (10.0, 16.67),
                merge_start: (0.0, 20.0),
                duration: 60.0,
            },
            Environment::Highway => Self {
                lane_width: 3.6,
                ego_speed: 29.0,
                speed_limit: 33.33,
                leader_x: (50.0, 65.0),
                others_x: (-85.0, 85.0),
                initial_speed: (26.0, 32.0),
                accel: (-3.0, 3.0),
                speed_bounds: (23.0, 33.33),
                merge_start: (0.0, 20.0),
                duration: 60.0,
            },
        }
    }
}

/// Random test with six surrounding vehicles: one ahead in the ego lane,
/// four in the target lane and one in the far lane that merges into the
/// target lane. Overlapping placements are redrawn.
pub fn build_random(env: Environment, seed: u64) -> Scenario {
    let p = RandomEnvironment::of(env);
    let lanes = LaneLayout::new(p.lane_width, 3);
    let ego = EgoSpec { x: 0.0, y: lanes.center(0), psi: 0.0, v: p.ego_speed, lane: 0, target_lane: 1 };
    let gains = ControllerGains { v_d: p.ego_speed, v_l: p.speed_limit, ..ControllerGains::default() };
    let mut scn = base(&format!("random-{env}-{seed}"), lanes, ego, gains);
    scn.seed = seed;
    scn.duration = p.duration;
    scn.stop_on_success = true;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_accel = Behavior::RandomAccel {
        accel_min: p.accel.0,
        accel_max: p.accel.1,
        speed_min: p.speed_bounds.0,
        speed_max: p.speed_bounds.1,
        resample_period: 1.0,
    };
    let geo = scn.geometry;
    let mut placed: Vec<(f64, f64)> = vec![(ego.x, ego.y)];
    let mut place = |rng: &mut ChaCha8Rng, range: (f64, f64), y: f64| loop {
        let x = rng.gen_range(range.0..=range.1);
        if placed.iter().all(|q| !bodies_overlap((x, y), *q, &geo, 1.0)) {
            placed.push((x, y));
            return x;
        }
    };

    let x1 = place(&mut rng, p.leader_x, lanes.center(0));
    let v1 = rng.gen_range(p.initial_speed.0..=p.initial_speed.1);
    scn.surrounding.push(SurroundingSpec { id: 1, x: x1, y: lanes.center(0), v: v1, behavior: random_accel });
    for id in 2..=5 {
        let x = place(&mut rng, p.others_x, lanes.center(1));
        let v = rng.gen_range(p.initial_speed.0..=p.initial_speed.1);
        scn.surrounding.push(SurroundingSpec { id, x, y: lanes.center(1), v, behavior: random_accel });
    }
    let x6 = place(&mut rng, p.others_x, lanes.center(2));
    let v6 = rng.gen_range(p.initial_speed.0..=p.initial_speed.1);
    let start_time = rng.gen_range(p.merge_start.0..=p.merge_start.1);
    scn.surrounding.push(SurroundingSpec {
        id: 6,
        x: x6,
        y: lanes.center(2),
        v: v6,
        behavior: Behavior::ScriptedLaneChange { target_lane: 1, start_time, duration: SCRIPTED_CHANGE_TIME },
    });
    scn
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn typical_rows() {
        let s1 = build_typical(1).unwrap();
        assert_eq!((s1.surrounding[0].x, s1.surrounding[0].y, s1.surrounding[0].v), (55.0, 1.75, 22.0));
        let s2 = build_typical(2).unwrap();
        assert_eq!((s2.surrounding[0].x, s2.surrounding[0].y, s2.surrounding[0].v), (-15.0, 5.25, 19.0));
        let s3 = build_typical(3).unwrap();
        assert_eq!((s3.surrounding[0].x, s3.surrounding[0].y, s3.surrounding[0].v), (3.0, 8.75, 33.0));
        assert!(matches!(s3.surrounding[0].behavior, Behavior::ScriptedLaneChange { target_lane: 1, .. }));
        for s in [&s1, &s2, &s3] {
            assert_eq!(s.ego.state(), VehicleState::new(0.0, 1.75, 0.0, 27.5));
            assert_eq!((s.gains.v_d, s.gains.v_l), (27.5, 33.33));
            assert_eq!(s.command_at(0.0), 1);
            s.validate().unwrap();
        }
        assert!(matches!(build_typical(4), Err(ScenarioError::UnknownTypical(4))));
    }

    #[test]
    fn random_environments() {
        let urban = build_random(Environment::Urban, 3);
        assert_eq!(urban.lanes.width, 3.0);
        assert_eq!(urban.ego.v, 13.0);
        assert_eq!(urban.surrounding.len(), 6);
        urban.validate().unwrap();
        let highway = build_random(Environment::Highway, 3);
        assert_eq!(highway.lanes.width, 3.6);
        assert_eq!(highway.ego.v, 29.0);
        highway.validate().unwrap();
        assert_eq!(build_random(Environment::Urban, 11), build_random(Environment::Urban, 11));
        assert_ne!(build_random(Environment::Urban, 11), build_random(Environment::Urban, 12));
    }

    #[test]
    fn toml_round_trip() {
        for scn in [build_typical(3).unwrap(), build_random(Environment::Highway, 5)] {
            let text = scn.to_toml().unwrap();
            assert_eq!(Scenario::from_toml(&text).unwrap(), scn);
        }
    }

    #[test]
    fn invalid_files_are_rejected() {
        assert!(Scenario::from_toml("name = 3").is_err());
        let mut scn = build_typical(1).unwrap();
        scn.surrounding[0].x = 1.0;
        assert!(Scenario::from_toml(&scn.to_toml().unwrap()).is_err());
    }

    #[test]
    fn command_schedule_lookup() {
        let mut scn = build_typical(1).unwrap();
        scn.commands = vec![CommandEntry { t: 1.0, c: 1 }, CommandEntry { t: 2.0, c: 0 }];
        assert_eq!(scn.command_at(0.5), 0);
        assert_eq!(scn.command_at(1.0), 1);
        assert_eq!(scn.command_at(2.5), 0);
    }
}
