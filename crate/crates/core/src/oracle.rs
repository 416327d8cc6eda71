//! Independent reference implementations used to cross-check the solver,
//! the analytic barrier derivatives and the collision test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::barrier::{clf_evaluations, evaluate, Branch, BarrierKind, ControllerGains, Formulation, SurroundingVehicle};
use crate::dynamics::{derivative_affine, ControlInput, VehicleGeometry, VehicleState};
use crate::qp::{LinearInequality, QuadraticProgram, RowTag};
use crate::sim::collision::{ego_corners, other_corners};

/// Solves `m x = rhs` by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot falls below `1e-12` times the largest entry.
pub fn gauss_solve(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    let scale = m.iter().flatten().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-12 * scale {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f != 0.0 {
                for k in col..n {
                    m[row][k] -= f * m[col][k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - tail) / m[row][row];
    }
    Some(x)
}

/// Exhaustive active-set enumeration. Every subset of at most `dim` rows is
/// tried as the active set; among KKT points that are primal feasible with
/// non-negative multipliers the one with the lowest cost is returned.
/// `None` means no KKT point exists, i.e. the problem is infeasible.
pub fn brute_force_qp(qp: &QuadraticProgram) -> Option<Vec<f64>> {
    let n = qp.dim;
    let rows: Vec<&LinearInequality> = qp.inequalities.iter().collect();
    let m = rows.len();
    let g = qp.effective_cost();
    let tol = 1e-9;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if active.len() > n {
            continue;
        }
        let k = active.len();
        let mut kkt = vec![vec![0.0; n + k]; n + k];
        let mut rhs = vec![0.0; n + k];
        for i in 0..n {
            for j in 0..n {
                kkt[i][j] = g[(i, j)];
            }
            rhs[i] = -qp.cost_vector[i];
        }
        for (slot, &r) in active.iter().enumerate() {
            for j in 0..n {
                kkt[n + slot][j] = rows[r].coeffs[j];
                kkt[j][n + slot] = rows[r].coeffs[j];
            }
            rhs[n + slot] = rows[r].bound;
        }
        let Some(sol) = gauss_solve(kkt, rhs) else { continue };
        let z = &sol[..n];
        if sol[n..].iter().any(|&l| l < -tol) {
            continue;
        }
        if rows.iter().any(|r| r.value(z) > r.bound + tol * (1.0 + r.bound.abs())) {
            continue;
        }
        let cost = qp.objective(z);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, z.to_vec()));
        }
    }
    best.map(|(_, z)| z)
}

/// Random PSD problem with `dim` variables and up to `max_rows` rows. Rows
/// are built around a random point, so most instances are feasible; about
/// one in ten gets a deliberately contradictory pair.
pub fn random_qp(rng: &mut impl Rng, dim: usize, max_rows: usize) -> QuadraticProgram {
    let rank = rng.gen_range(1..=dim);
    let b: Vec<Vec<f64>> = (0..rank).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let mut h = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            h[i * dim + j] = b.iter().map(|r| r[i] * r[j]).sum();
        }
    }
    // a linear term in the range of H keeps the unconstrained minimiser finite
    let w: Vec<f64> = (0..rank).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let c: Vec<f64> = (0..dim).map(|j| b.iter().zip(&w).map(|(r, wk)| r[j] * wk).sum()).collect();
    let mut qp = QuadraticProgram::new(dim, h, c);
    let center: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rows = rng.gen_range(1..=max_rows);
    for _ in 0..rows {
        let coeffs: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let at: f64 = coeffs.iter().zip(&center).map(|(a, z)| a * z).sum();
        qp.push(LinearInequality::new(coeffs, at + rng.gen_range(0.0..0.5), RowTag::Generic));
    }
    if rows >= 2 && rng.gen_bool(0.1) {
        let first = qp.inequalities[0].clone();
        let flipped = first.coeffs.iter().map(|v| -v).collect();
        qp.inequalities[1] = LinearInequality::new(flipped, -first.bound - 1.0, RowTag::Generic);
    }
    // some problems also bound a single coordinate
    if qp.inequalities.len() < max_rows && rng.gen_bool(0.3) {
        let i = rng.gen_range(0..dim);
        let mut coeffs = vec![0.0; dim];
        coeffs[i] = 1.0;
        qp.push(LinearInequality::new(coeffs, center[i] + 0.1, RowTag::Generic));
    }
    qp
}

/// Largest relative disagreement between analytic and finite-difference
/// rates over the accepted samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FdStats {
    pub checked: usize,
    /// Samples dropped because the rate was too small to compare relatively
    /// or the stencil crossed a branch boundary.
    pub rejected: usize,
    pub max_rel_error: f64,
}

impl FdStats {
    fn record(&mut self, analytic: f64, fd: f64) {
        if analytic.abs() < FD_MIN_RATE {
            self.rejected += 1;
            return;
        }
        self.checked += 1;
        self.max_rel_error = self.max_rel_error.max((analytic - fd).abs() / analytic.abs());
    }
}

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Rates smaller than this are not compared relatively.
pub const FD_MIN_RATE: f64 = 1e-2;

fn moved(s: &VehicleState, u: &ControlInput, geo: &VehicleGeometry, tau: f64) -> VehicleState {
    let d = derivative_affine(s, u, geo);
    VehicleState::new(s.x + tau * d[0], s.y + tau * d[1], s.psi + tau * d[2], s.v + tau * d[3])
}

fn moved_other(o: &SurroundingVehicle, tau: f64) -> SurroundingVehicle {
    SurroundingVehicle { x: o.x + tau * o.v, y: o.y + tau * o.lat_speed, v: o.v + tau * o.accel, ..*o }
}

/// A random ego state, surrounding vehicle and input in the operating range.
pub fn random_coupled_state(rng: &mut impl Rng) -> (VehicleState, SurroundingVehicle, ControlInput) {
    let ego = VehicleState::new(0.0, rng.gen_range(0.0..10.5), rng.gen_range(-0.15..0.15), rng.gen_range(5.0..35.0));
    let other = SurroundingVehicle {
        id: 1,
        x: rng.gen_range(-60.0..60.0),
        y: rng.gen_range(0.0..10.5),
        v: rng.gen_range(5.0..35.0),
        accel: rng.gen_range(-3.0..3.0),
        lat_speed: rng.gen_range(-1.5..1.5),
        lane: 0,
    };
    let u = ControlInput::new(rng.gen_range(-3.0..3.0), rng.gen_range(-0.1..0.1));
    (ego, other, u)
}

/// Compares every barrier kind and formulation against central differences
/// along the affine model. Returns one entry per `(kind, formulation,
/// branch)` that was sampled.
pub fn barrier_fd_check(samples: usize, seed: u64) -> Vec<((BarrierKind, Formulation, Branch), FdStats)> {
    let gains = ControllerGains::default();
    let geo = VehicleGeometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<((BarrierKind, Formulation, Branch), FdStats)> = Vec::new();
    for kind in BarrierKind::ALL {
        for formulation in [Formulation::Following, Formulation::Returning] {
            let mut drawn = 0;
            while drawn < samples {
                let (ego, mut other, u) = random_coupled_state(&mut rng);
                if kind == BarrierKind::Fc && formulation == Formulation::Following {
                    other.x = other.x.abs();
                }
                drawn += 1;
                let e0 = evaluate(kind, formulation, &ego, &other, &gains, &geo);
                let key = (kind, formulation, e0.branch);
                let idx = match out.iter().position(|(k, _)| *k == key) {
                    Some(i) => i,
                    None => {
                        out.push((key, FdStats::default()));
                        out.len() - 1
                    }
                };
                let plus = evaluate(kind, formulation, &moved(&ego, &u, &geo, FD_STEP), &moved_other(&other, FD_STEP), &gains, &geo);
                let minus =
                    evaluate(kind, formulation, &moved(&ego, &u, &geo, -FD_STEP), &moved_other(&other, -FD_STEP), &gains, &geo);
                let sides_differ = |a: f64, b: f64| (a >= 0.0) != (b >= 0.0);
                let flips = sides_differ(other.x - ego.x, moved_other(&other, FD_STEP).x - moved(&ego, &u, &geo, FD_STEP).x)
                    || sides_differ(other.x - ego.x, moved_other(&other, -FD_STEP).x - moved(&ego, &u, &geo, -FD_STEP).x)
                    || sides_differ(ego.y - other.y, moved(&ego, &u, &geo, FD_STEP).y - moved_other(&other, FD_STEP).y)
                    || sides_differ(ego.y - other.y, moved(&ego, &u, &geo, -FD_STEP).y - moved_other(&other, -FD_STEP).y);
                if plus.branch != e0.branch || minus.branch != e0.branch || flips {
                    out[idx].1.rejected += 1;
                    continue;
                }
                let fd = (plus.h - minus.h) / (2.0 * FD_STEP);
                out[idx].1.record(e0.rate(u.a, u.beta), fd);
            }
        }
    }
    out
}

/// Same comparison for the speed, lateral and heading Lyapunov functions.
pub fn clf_fd_check(samples: usize, seed: u64) -> [FdStats; 3] {
    let geo = VehicleGeometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = [FdStats::default(); 3];
    for _ in 0..samples {
        let (ego, _, u) = random_coupled_state(&mut rng);
        let y_target = rng.gen_range(0.0..10.5);
        let v_desired = rng.gen_range(10.0..33.0);
        let now = clf_evaluations(&ego, &geo, y_target, v_desired);
        let plus = clf_evaluations(&moved(&ego, &u, &geo, FD_STEP), &geo, y_target, v_desired);
        let minus = clf_evaluations(&moved(&ego, &u, &geo, -FD_STEP), &geo, y_target, v_desired);
        for i in 0..3 {
            let fd = (plus[i].value - minus[i].value) / (2.0 * FD_STEP);
            out[i].record(now[i].rate(u.a, u.beta), fd);
        }
    }
    out
}

fn inside(p: [f64; 2], corners: &[[f64; 2]; 4]) -> bool {
    // strictly left of every counter-clockwise edge
    (0..4).all(|i| {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) > 0.0
    })
}

fn boundary_points(corners: &[[f64; 2]; 4], spacing: f64) -> Vec<[f64; 2]> {
    let mut pts = Vec::new();
    for i in 0..4 {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let n = (len / spacing).ceil().max(1.0) as usize;
        for k in 0..n {
            let t = k as f64 / n as f64;
            pts.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    pts
}

/// Overlap decided by sampling both outlines every `spacing` metres and
/// testing each sample for strict containment in the other body.
pub fn point_sample_overlap(ego: &VehicleState, other_x: f64, other_y: f64, geo: &VehicleGeometry, spacing: f64) -> bool {
    let a = ego_corners(ego, geo);
    let b = other_corners(other_x, other_y, geo);
    boundary_points(&a, spacing).into_iter().any(|p| inside(p, &b))
        || boundary_points(&b, spacing).into_iter().any(|p| inside(p, &a))
}
