//! Rule-based safety-critical lane-change control.
//!
//! A finite state machine picks, at every control step, which control
//! Lyapunov and control barrier constraints enter a small quadratic program
//! over the inputs of a kinematic bicycle model. The crate also contains the
//! closed-loop traffic simulator, Monte-Carlo batch runner and the acceptance
//! checks used by the `lanecbf` command-line tool.

pub mod acceptance;
pub mod barrier;
pub mod controller;
pub mod dynamics;
pub mod fsm;
pub mod lanes;
pub mod oracle;
pub mod qp;
pub mod report;
pub mod sim;

/// Layout of the decision vector `(a, beta, delta_v, delta_y, delta_psi)`.
pub mod decision {
    pub const DIM: usize = 5;
    pub const ACCEL: usize = 0;
    pub const BETA: usize = 1;
    pub const SLACK_V: usize = 2;
    pub const SLACK_Y: usize = 3;
    pub const SLACK_PSI: usize = 4;
}

pub use barrier::{BarrierEvaluation, BarrierKind, ControllerGains, SurroundingVehicle, VehiclesOfInterest};
pub use controller::{ControlOutput, Controller, ControllerDiagnostics};
pub use dynamics::{ControlInput, InputLimits, VehicleGeometry, VehicleState};
pub use fsm::{FsmState, SignalSet};
pub use lanes::LaneLayout;
pub use qp::{LinearInequality, QpSolution, QpStatus, QuadraticProgram};
pub use sim::{OutcomeLabel, Scenario, SimTrace};
