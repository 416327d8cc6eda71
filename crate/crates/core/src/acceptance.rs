//! The acceptance suite: eight pass/fail criteria covering the typical
//! scenarios, forward invariance, Monte-Carlo statistics, the oracles,
//! branch continuity, switching safety and batch determinism.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::{evaluate, BarrierKind, Branch, ControllerGains, Formulation, GapMeasures, SurroundingVehicle};
use crate::fsm::FsmState;
use crate::oracle;
use crate::qp;
use crate::report::{self, BatchConfig, GainOverrides};
use crate::sim::{self, Environment, OutcomeLabel, Scenario, SimTrace};

/// Barrier values below this count as leaving the safe set.
pub const H_TOL: f64 = -1e-6;
pub const TYPICAL_RUNTIME_LIMIT: f64 = 5.0;
pub const ACC_GAP_TOL: f64 = 0.02;
pub const MC_RUNTIME_LIMIT: f64 = 600.0;
pub const MC_INFEASIBLE_LIMIT: f64 = 2.0;
pub const FD_TOL: f64 = 1e-5;
pub const QP_TOL: f64 = 1e-6;
pub const KKT_TOL: f64 = 1e-8;
pub const CONTINUITY_TOL: f64 = 1e-12;
/// Reference success rates, urban then highway, and the informative band.
pub const REFERENCE_SUCCESS: [f64; 2] = [62.46, 55.58];
pub const SUCCESS_BAND: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CriterionResult {
    fn new(id: u8, name: &str, failures: Vec<String>, notes: Vec<String>) -> Self {
        let passed = failures.is_empty();
        let detail = if passed { notes.join("; ") } else { failures.join("; ") };
        Self { id, name: name.to_owned(), passed, detail }
    }

    pub fn line(&self) -> String {
        format!("[{}] {} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.id, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceOptions {
    pub gains: GainOverrides,
    /// Runs per environment and traffic mode in the Monte-Carlo criterion.
    pub mc_runs: usize,
    pub workers: usize,
}

impl Default for AcceptanceOptions {
    fn default() -> Self {
        Self {
            gains: GainOverrides::default(),
            mc_runs: 500,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

fn typical(n: u32, opts: &AcceptanceOptions) -> Scenario {
    let mut scn = sim::build_typical(n).expect("typical scenarios 1 to 3 exist");
    opts.gains.apply(&mut scn.gains);
    scn
}

/// Ego at 27.5 m/s cruising behind a 22 m/s leader with no lane-change
/// command for 60 s.
pub fn build_acc_regression() -> Scenario {
    let mut scn = sim::build_typical(1).expect("typical scenario 1 exists");
    scn.name = "acc-regression".into();
    scn.commands.clear();
    scn.duration = 60.0;
    scn
}

fn timed_run(scn: &Scenario) -> Result<(SimTrace, f64), String> {
    let started = Instant::now();
    let trace = sim::run(scn).map_err(|e| format!("{}: {e}", scn.name))?;
    Ok((trace, started.elapsed().as_secs_f64()))
}

/// Violations of the input limits along a trace, checked against the
/// previously applied slip angle.
fn input_violations(scn: &Scenario, trace: &SimTrace) -> Vec<String> {
    let lim = &scn.limits;
    let geo = &scn.geometry;
    let tol = 1e-9;
    let mut beta_prev = 0.0;
    let mut out = Vec::new();
    for r in &trace.rows {
        let u = r.output.input;
        let lateral = r.ego.v * r.ego.v * u.beta.abs() / geo.l_r;
        let ok = u.a.abs() <= lim.a_max + tol
            && u.beta.abs() <= lim.beta_max + tol
            && (u.beta - beta_prev).abs() <= lim.beta_rate_max * scn.dt + tol
            && lateral <= lim.ay_max + tol;
        if !ok {
            out.push(format!("{} input out of bounds at t = {:.2}", scn.name, r.t));
            break;
        }
        beta_prev = u.beta;
    }
    out
}

fn common_run_checks(scn: &Scenario, trace: &SimTrace, seconds: f64, failures: &mut Vec<String>) {
    if let Some(c) = trace.summary.collision {
        failures.push(format!("{} collided with vehicle {} at t = {:.2}", scn.name, c.vehicle_id, c.t));
    }
    if let Some(h) = trace.summary.min_h.overall() {
        if h < H_TOL {
            failures.push(format!("{} min h = {h:.3e}", scn.name));
        }
    }
    if trace.summary.fallback_events > 0 {
        failures.push(format!("{} used the fallback input", scn.name));
    }
    failures.extend(input_violations(scn, trace));
    if seconds >= TYPICAL_RUNTIME_LIMIT {
        failures.push(format!("{} took {seconds:.2} s", scn.name));
    }
}

fn success_before(trace: &SimTrace) -> f64 {
    trace.summary.success_time.unwrap_or(f64::INFINITY)
}

/// Typical-scenario reproduction.
pub fn criterion_typical(opts: &AcceptanceOptions) -> CriterionResult {
    let name = "typical scenarios";
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for n in 1..=3 {
        let scn = typical(n, opts);
        let (trace, seconds) = match timed_run(&scn) {
            Ok(r) => r,
            Err(e) => return CriterionResult::new(1, name, vec![e], notes),
        };
        common_run_checks(&scn, &trace, seconds, &mut failures);
        if trace.outcome() != OutcomeLabel::LaneChangeSuccess {
            failures.push(format!("{} ended {}", scn.name, trace.outcome()));
        }
        let t_success = success_before(&trace);
        let before: Vec<_> = trace.rows.iter().filter(|r| r.t < t_success).collect();
        let first_a = trace.rows.first().map_or(0.0, |r| r.output.input.a);
        match n {
            1 => {
                let v_min = before.iter().map(|r| r.ego.v).fold(f64::INFINITY, f64::min);
                if !(first_a < 0.0 && v_min < scn.ego.v) {
                    failures.push(format!("scenario 1 has no initial deceleration (a0 = {first_a:.3})"));
                }
            }
            2 => {
                let v_max = before.iter().map(|r| r.ego.v).fold(0.0, f64::max);
                if !(first_a > 0.0 && v_max > 27.5) {
                    failures.push(format!("scenario 2 has no initial acceleration (v max {v_max:.2})"));
                }
            }
            _ => {
                let seq = trace.summary.state_sequence();
                let pattern = seq.windows(3).any(|w| {
                    w[0] == FsmState::L && w[1] == FsmState::Bl && matches!(w[2], FsmState::Acc | FsmState::L)
                });
                if !(pattern && seq.last() == Some(&FsmState::Acc)) {
                    failures.push(format!("scenario 3 state sequence {seq:?}"));
                }
            }
        }
        notes.push(format!("{} success at {:.2} s in {:.3} s", scn.name, t_success, seconds));
    }
    CriterionResult::new(1, name, failures, notes)
}

/// Forward invariance of the cruise barrier and convergence of the gap.
pub fn criterion_acc_invariance(opts: &AcceptanceOptions) -> CriterionResult {
    let name = "ACC forward invariance";
    let mut scn = build_acc_regression();
    opts.gains.apply(&mut scn.gains);
    let trace = match sim::run(&scn) {
        Ok(t) => t,
        Err(e) => return CriterionResult::new(2, name, vec![e.to_string()], vec![]),
    };
    let mut failures = Vec::new();
    let fc: Vec<f64> = trace.rows.iter().map(|r| r.output.diagnostics.h(BarrierKind::Fc).unwrap_or(f64::NAN)).collect();
    let min_h = fc.iter().copied().fold(f64::INFINITY, f64::min);
    if fc.iter().any(|h| !(h >= &H_TOL)) {
        failures.push(format!("h_fc reached {min_h:.3e}"));
    }
    if trace.summary.fallback_events > 0 || trace.rows.len() != scn.steps() {
        failures.push(format!("run stopped early after {} steps", trace.rows.len()));
    }
    let Some(last) = trace.rows.last() else {
        return CriterionResult::new(2, name, vec!["empty trace".into()], vec![]);
    };
    let leader = last.others[0];
    let other = SurroundingVehicle { id: leader.id, x: leader.x, y: leader.y, v: leader.v, accel: 0.0, lat_speed: 0.0, lane: 0 };
    let gap = GapMeasures::between(&last.ego, &other, &scn.geometry).dx;
    let wanted = (1.0 + scn.gains.epsilon) * last.ego.v;
    let rel = (gap - wanted).abs() / wanted;
    if rel >= ACC_GAP_TOL {
        failures.push(format!("steady gap {gap:.3} m vs {wanted:.3} m ({:.2}%)", 100.0 * rel));
    }
    CriterionResult::new(
        2,
        name,
        failures,
        vec![format!("min h_fc {min_h:.3e}, v_ss {:.3}, gap {gap:.3} m vs {wanted:.3} m ({:.3}%)", last.ego.v, 100.0 * rel)],
    )
}

/// Monte-Carlo statistics in default and strict traffic.
pub fn criterion_monte_carlo(opts: &AcceptanceOptions) -> CriterionResult {
    let name = "Monte-Carlo statistics";
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for strict in [false, true] {
        let mode = if strict { "strict" } else { "default" };
        let mut seconds = 0.0;
        for (k, env) in [Environment::Urban, Environment::Highway].into_iter().enumerate() {
            let mut cfg = BatchConfig::new(env, opts.mc_runs, 1);
            cfg.workers = opts.workers;
            cfg.strict_traffic = strict;
            cfg.gains = opts.gains;
            let res = match report::run_batch(&cfg) {
                Ok(r) => r,
                Err(e) => return CriterionResult::new(3, name, vec![e.to_string()], notes),
            };
            seconds += res.timing.wall_seconds;
            let r = &res.report;
            let pct = |o: OutcomeLabel| r.outcomes[o.as_str()].percent;
            let infeasible = pct(OutcomeLabel::QpInfeasible);
            if r.collisions > 0 {
                failures.push(format!("{mode} {env}: {} collisions", r.collisions));
            }
            let limit = if strict { 0.0 } else { MC_INFEASIBLE_LIMIT };
            if infeasible > limit {
                failures.push(format!("{mode} {env}: qp_infeasible {infeasible:.2}% > {limit}%"));
            }
            if r.max_kkt_residual >= KKT_TOL {
                failures.push(format!("{mode} {env}: KKT residual {:.2e}", r.max_kkt_residual));
            }
            let success = pct(OutcomeLabel::LaneChangeSuccess);
            let band = if (success - REFERENCE_SUCCESS[k]).abs() <= SUCCESS_BAND { "inside" } else { "outside" };
            notes.push(format!(
                "{mode} {env}: success {success:.2}% ({band} the informative band around {}%), still {:.2}%, infeasible {infeasible:.2}%, collisions {}",
                REFERENCE_SUCCESS[k],
                pct(OutcomeLabel::StillInCurrentLane),
                r.collisions
            ));
        }
        if seconds >= MC_RUNTIME_LIMIT {
            failures.push(format!("{mode} batches took {seconds:.1} s"));
        }
        notes.push(format!("{mode} batches took {seconds:.1} s"));
    }
    CriterionResult::new(3, name, failures, notes)
}

/// Analytic barrier and Lyapunov rates against finite differences.
pub fn criterion_derivatives(samples: usize) -> CriterionResult {
    let name = "derivative oracle";
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let stats = oracle::barrier_fd_check(samples, 11);
    let expected = |kind: BarrierKind, f: Formulation| -> Vec<Branch> {
        if f == Formulation::Returning && kind != BarrierKind::Fc {
            vec![Branch::Closing, Branch::Opening, Branch::Lateral]
        } else {
            vec![Branch::Closing, Branch::Opening]
        }
    };
    for kind in BarrierKind::ALL {
        for f in [Formulation::Following, Formulation::Returning] {
            for branch in expected(kind, f) {
                match stats.iter().find(|(k, _)| *k == (kind, f, branch)) {
                    Some((_, s)) if s.checked > 0 => {
                        worst = worst.max(s.max_rel_error);
                        checked += s.checked;
                        if s.max_rel_error >= FD_TOL {
                            failures.push(format!("{kind} {f:?} {branch:?}: relative error {:.2e}", s.max_rel_error));
                        }
                    }
                    _ => failures.push(format!("{kind} {f:?} {branch:?} never sampled")),
                }
            }
        }
    }
    for (i, s) in oracle::clf_fd_check(samples, 12).iter().enumerate() {
        worst = worst.max(s.max_rel_error);
        checked += s.checked;
        if s.max_rel_error >= FD_TOL || s.checked == 0 {
            failures.push(format!("Lyapunov function {i}: relative error {:.2e}", s.max_rel_error));
        }
    }
    CriterionResult::new(4, name, failures, vec![format!("{checked} samples compared, worst relative error {worst:.2e}")])
}

/// Solver against exhaustive enumeration, plus closed-loop KKT residuals.
pub fn criterion_qp(instances: usize, opts: &AcceptanceOptions) -> CriterionResult {
    let name = "QP solver oracle";
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut worst, mut infeasible) = (0.0_f64, 0);
    for i in 0..instances {
        let p = oracle::random_qp(&mut rng, 5, 10);
        let sol = match qp::solve(&p) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("instance {i}: {e}"));
                continue;
            }
        };
        match oracle::brute_force_qp(&p) {
            Some(z) if sol.is_optimal() => {
                let err = z.iter().zip(&sol.z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst = worst.max(err);
                if err >= QP_TOL {
                    failures.push(format!("instance {i}: distance {err:.2e}"));
                }
            }
            None if !sol.is_optimal() => infeasible += 1,
            found => failures.push(format!("instance {i}: enumeration {} but solver {}", if found.is_some() { "feasible" } else { "infeasible" }, sol.status)),
        }
    }
    let mut scenarios: Vec<Scenario> = (1..=3).map(|n| typical(n, opts)).collect();
    let mut acc = build_acc_regression();
    opts.gains.apply(&mut acc.gains);
    scenarios.push(acc);
    let mut kkt: f64 = 0.0;
    for scn in &scenarios {
        match sim::run_with(scn, false) {
            Ok(t) => kkt = kkt.max(t.summary.max_kkt_residual),
            Err(e) => failures.push(e.to_string()),
        }
    }
    if kkt >= KKT_TOL {
        failures.push(format!("closed-loop KKT residual {kkt:.2e}"));
    }
    CriterionResult::new(
        5,
        name,
        failures,
        vec![format!("{instances} instances ({infeasible} infeasible), worst distance {worst:.2e}, closed-loop KKT {kkt:.2e}")],
    )
}

/// Barrier values on both sides of each speed branch boundary.
pub fn criterion_continuity(samples: usize) -> CriterionResult {
    let name = "branch continuity";
    let gains = ControllerGains::default();
    let geo = crate::dynamics::VehicleGeometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for kind in BarrierKind::ALL {
        for f in [Formulation::Following, Formulation::Returning] {
            for _ in 0..samples {
                let (ego, mut other, _) = oracle::random_coupled_state(&mut rng);
                // longitudinal branches only; keep the other vehicle clear ahead or behind
                let ahead = kind != BarrierKind::Bt;
                other.x = if ahead { 10.0 + other.x.abs() } else { -10.0 - other.x.abs() };
                let side = |v: f64| evaluate(kind, f, &ego, &SurroundingVehicle { v, ..other }, &gains, &geo);
                let (lo, hi) = (side(ego.v.next_down()), side(ego.v.next_up()));
                if lo.branch == hi.branch {
                    failures.push(format!("{kind} {f:?}: no branch change at v_k = v"));
                    break;
                }
                worst = worst.max((lo.h - hi.h).abs());
            }
        }
    }
    if worst >= CONTINUITY_TOL {
        failures.push(format!("jump {worst:.2e}"));
    }
    CriterionResult::new(6, name, failures, vec![format!("largest jump {worst:.2e}")])
}

/// No safety-continuity violation when barrier sets switch.
pub fn criterion_switching(opts: &AcceptanceOptions) -> CriterionResult {
    let name = "switching safety";
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for n in 1..=3 {
        let scn = typical(n, opts);
        match sim::run_with(&scn, false) {
            Ok(t) => {
                let s = &t.summary;
                if s.switch_violations > 0 {
                    failures.push(format!("{}: {} of {} switches violated", scn.name, s.switch_violations, s.switch_checks));
                }
                notes.push(format!("{}: {} switches checked", scn.name, s.switch_checks));
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    CriterionResult::new(7, name, failures, notes)
}

/// Byte-identical batch outputs for one and several workers.
pub fn criterion_determinism(opts: &AcceptanceOptions) -> CriterionResult {
    let name = "determinism";
    let render = |workers: usize| -> Result<String, String> {
        let mut cfg = BatchConfig::new(Environment::Urban, 100, 7);
        cfg.workers = workers;
        cfg.gains = opts.gains;
        let res = report::run_batch(&cfg).map_err(|e| e.to_string())?;
        let json = serde_json::to_string_pretty(&res.report).map_err(|e| e.to_string())?;
        Ok(json + &report::ledger_csv(&res.ledger))
    };
    let many = opts.workers.max(4);
    let outputs: Result<Vec<String>, String> = [1, many, many].into_iter().map(render).collect();
    match outputs {
        Err(e) => CriterionResult::new(8, name, vec![e], vec![]),
        Ok(o) => {
            let same = o.windows(2).all(|w| w[0] == w[1]);
            let failures = if same { vec![] } else { vec![format!("reports differ between 1 and {many} workers")] };
            CriterionResult::new(8, name, failures, vec![format!("urban 100 runs seed 7 identical for 1 and {many} workers, twice")])
        }
    }
}

/// Runs every criterion in order.
pub fn run_all(opts: &AcceptanceOptions) -> Vec<CriterionResult> {
    vec![
        criterion_typical(opts),
        criterion_acc_invariance(opts),
        criterion_monte_carlo(opts),
        criterion_derivatives(1000),
        criterion_qp(500, opts),
        criterion_continuity(1000),
        criterion_switching(opts),
        criterion_determinism(opts),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_gain_fails_typical_criterion() {
        let opts = AcceptanceOptions {
            gains: GainOverrides { gamma_fc: Some(-1.0), ..GainOverrides::default() },
            ..AcceptanceOptions::default()
        };
        let r = criterion_typical(&opts);
        assert!(!r.passed);
        assert!(r.detail.contains("gamma_fc"), "{}", r.detail);
    }

    #[test]
    fn result_line_format() {
        let r = CriterionResult::new(4, "x", vec![], vec!["ok".into()]);
        assert_eq!(r.line(), "[PASS] 4 x: ok");
    }
}
