//! Lane-change state machine and its input signals.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::VehicleGeometry;
use crate::lanes::LaneLayout;

/// Time the ego body must stay inside the target lane before the change counts.
pub const TARGET_DWELL: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FsmState {
    /// Adaptive cruise in the current lane.
    #[serde(rename = "ACC")]
    Acc,
    /// Changing to the left lane.
    L,
    /// Changing to the right lane.
    R,
    /// Returning to the original lane after a left change was aborted.
    #[serde(rename = "BL")]
    Bl,
    /// Returning to the original lane after a right change was aborted.
    #[serde(rename = "BR")]
    Br,
}

impl FsmState {
    pub fn as_str(self) -> &'static str {
        match self {
            FsmState::Acc => "ACC",
            FsmState::L => "L",
            FsmState::R => "R",
            FsmState::Bl => "BL",
            FsmState::Br => "BR",
        }
    }

    pub fn is_lane_change(self) -> bool {
        matches!(self, FsmState::L | FsmState::R)
    }

    pub fn is_returning(self) -> bool {
        matches!(self, FsmState::Bl | FsmState::Br)
    }
}

impl fmt::Display for FsmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FsmState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ACC" => Ok(FsmState::Acc),
            "L" => Ok(FsmState::L),
            "R" => Ok(FsmState::R),
            "BL" => Ok(FsmState::Bl),
            "BR" => Ok(FsmState::Br),
            other => Err(format!("unknown FSM state {other:?}")),
        }
    }
}

/// Lateral progress of a lane-change attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Progress {
    /// Body entirely inside the original lane.
    InLane,
    /// Some body edge has crossed into the target lane.
    Crossing,
    /// Body inside the target lane for the full dwell time.
    Complete,
}

impl Progress {
    pub fn value(self) -> f64 {
        match self {
            Progress::InLane => 0.0,
            Progress::Crossing => 0.5,
            Progress::Complete => 1.0,
        }
    }
}

/// FSM inputs: the lane-change command `c`, lateral progress `p` and the
/// traffic-environment flag `e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalSet {
    pub c: i8,
    pub p: Progress,
    pub e: bool,
}

impl SignalSet {
    pub fn new(c: i8, p: Progress, e: bool) -> Self {
        Self { c, p, e }
    }

    pub fn e_value(&self) -> u8 {
        u8::from(self.e)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FsmError {
    #[error("command {0} is not one of -1, 0, 1")]
    InvalidCommand(i8),
    #[error("undefined signal combination in state {state}: c = {c}")]
    Undefined { state: FsmState, c: i8 },
}

/// One transition of the state machine. `recontained` reports whether the
/// ego body is back inside its original lane, which ends a return manoeuvre.
pub fn transition(state: FsmState, signals: SignalSet, recontained: bool) -> Result<FsmState, FsmError> {
    let SignalSet { c, p, e } = signals;
    if !(-1..=1).contains(&c) {
        return Err(FsmError::InvalidCommand(c));
    }
    use FsmState::*;
    let next = match state {
        Acc => match (c, e) {
            (1, true) => L,
            (-1, true) => R,
            _ => Acc,
        },
        L | R => {
            let reversed = (state == L && c == -1) || (state == R && c == 1);
            if reversed {
                return Err(FsmError::Undefined { state, c });
            }
            if p == Progress::Complete {
                Acc
            } else if !e {
                if state == L {
                    Bl
                } else {
                    Br
                }
            } else {
                state
            }
        }
        Bl | Br => {
            let reversed = (state == Bl && c == -1) || (state == Br && c == 1);
            if reversed {
                return Err(FsmError::Undefined { state, c });
            }
            if recontained {
                Acc
            } else {
                state
            }
        }
    };
    Ok(next)
}

/// Lateral progress from body geometry. `dwell` is how long the body has
/// been continuously inside the target lane.
pub fn compute_p(
    ego_y: f64,
    geo: &VehicleGeometry,
    lanes: &LaneLayout,
    origin_lane: usize,
    target_lane: usize,
    dwell: f64,
) -> Progress {
    if lanes.body_within(ego_y, geo, target_lane) && dwell + 1e-9 >= TARGET_DWELL {
        Progress::Complete
    } else if lanes.body_within(ego_y, geo, origin_lane) {
        Progress::InLane
    } else {
        Progress::Crossing
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use FsmState::*;

    #[test]
    fn state_machine_edges() {
        let s = |c, p, e| SignalSet::new(c, p, e);
        assert_eq!(transition(Acc, s(1, Progress::InLane, true), false), Ok(L));
        assert_eq!(transition(Acc, s(-1, Progress::InLane, true), false), Ok(R));
        assert_eq!(transition(Acc, s(1, Progress::InLane, false), false), Ok(Acc));
        assert_eq!(transition(Acc, s(0, Progress::InLane, true), false), Ok(Acc));
        assert_eq!(transition(L, s(1, Progress::Crossing, false), false), Ok(Bl));
        assert_eq!(transition(R, s(-1, Progress::InLane, false), false), Ok(Br));
        assert_eq!(transition(L, s(1, Progress::Complete, true), false), Ok(Acc));
        assert_eq!(transition(L, s(1, Progress::Crossing, true), false), Ok(L));
        assert_eq!(transition(Bl, s(1, Progress::InLane, true), false), Ok(Bl));
        assert_eq!(transition(Bl, s(1, Progress::InLane, true), true), Ok(Acc));
        assert_eq!(transition(Br, s(-1, Progress::InLane, false), true), Ok(Acc));
    }

    #[test]
    fn undefined_combinations_are_rejected() {
        assert!(transition(Acc, SignalSet::new(2, Progress::InLane, true), false).is_err());
        assert!(transition(L, SignalSet::new(-1, Progress::InLane, true), false).is_err());
        assert!(transition(Br, SignalSet::new(1, Progress::InLane, true), false).is_err());
    }

    #[test]
    fn transition_is_closed_over_reachable_inputs() {
        for state in [Acc, L, R, Bl, Br] {
            for c in -1..=1 {
                for p in [Progress::InLane, Progress::Crossing, Progress::Complete] {
                    for e in [false, true] {
                        for recontained in [false, true] {
                            if let Ok(next) = transition(state, SignalSet::new(c, p, e), recontained) {
                                assert!([Acc, L, R, Bl, Br].contains(&next));
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn progress_from_geometry() {
        let lanes = LaneLayout::new(3.5, 3);
        let geo = VehicleGeometry::default();
        assert_eq!(compute_p(1.75, &geo, &lanes, 0, 1, 0.0), Progress::InLane);
        // left edge 1 cm past the boundary
        assert_eq!(compute_p(3.5 - 0.93 + 0.01, &geo, &lanes, 0, 1, 0.0), Progress::Crossing);
        assert_eq!(compute_p(5.25, &geo, &lanes, 0, 1, 1.49), Progress::Crossing);
        assert_eq!(compute_p(5.25, &geo, &lanes, 0, 1, 1.50), Progress::Complete);
        assert_eq!(compute_p(5.25, &geo, &lanes, 0, 1, 150.0 * 0.01), Progress::Complete);
        assert_eq!(compute_p(5.25, &geo, &lanes, 0, 1, 149.0 * 0.01), Progress::Crossing);
    }
}
