//! Dense convex quadratic programs with inequality rows, solved by a primal
//! active-set method that is seeded by a phase-1 feasibility subproblem.
//!
//! Problems have the form
//!
//! ```text
//!     minimize    1/2 z' (Q + ridge I) z + c' z
//!     subject to  A z <= b
//! ```
//!
//! and are tiny (five or six variables, a dozen rows), so every linear solve
//! is a dense LU of the full KKT matrix.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ridge added to the cost matrix so that minimisers are unique.
pub const DEFAULT_RIDGE: f64 = 1e-6;
/// Rows violated by at most this much count as satisfied.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Largest accepted stationarity residual of a returned optimum.
pub const STATIONARITY_TOL: f64 = 1e-8;

const PHASE1_PROX: f64 = 1e-6;
const PHASE1_REFINEMENTS: usize = 6;

/// Provenance of a constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowTag {
    ClfV,
    ClfY,
    ClfPsi,
    CbfFc,
    CbfFt,
    CbfBt,
    BoxAccelUpper,
    BoxAccelLower,
    BoxBetaUpper,
    BoxBetaLower,
    BoxBetaRateUpper,
    BoxBetaRateLower,
    BoxLateralUpper,
    BoxLateralLower,
    Generic,
}

impl RowTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RowTag::ClfV => "clf-v",
            RowTag::ClfY => "clf-y",
            RowTag::ClfPsi => "clf-psi",
            RowTag::CbfFc => "cbf-fc",
            RowTag::CbfFt => "cbf-ft",
            RowTag::CbfBt => "cbf-bt",
            RowTag::BoxAccelUpper => "box-a-upper",
            RowTag::BoxAccelLower => "box-a-lower",
            RowTag::BoxBetaUpper => "box-beta-upper",
            RowTag::BoxBetaLower => "box-beta-lower",
            RowTag::BoxBetaRateUpper => "box-beta-rate-upper",
            RowTag::BoxBetaRateLower => "box-beta-rate-lower",
            RowTag::BoxLateralUpper => "box-ay-upper",
            RowTag::BoxLateralLower => "box-ay-lower",
            RowTag::Generic => "generic",
        }
    }

    pub fn is_barrier(self) -> bool {
        matches!(self, RowTag::CbfFc | RowTag::CbfFt | RowTag::CbfBt)
    }
}

impl fmt::Display for RowTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row `coeffs · z <= bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearInequality {
    pub coeffs: Vec<f64>,
    pub bound: f64,
    pub tag: RowTag,
}

impl LinearInequality {
    pub fn new(coeffs: Vec<f64>, bound: f64, tag: RowTag) -> Self {
        Self { coeffs, bound, tag }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// A zero row that every point satisfies.
    pub fn is_vacuous(&self) -> bool {
        self.is_zero() && self.bound >= 0.0
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.coeffs.iter().zip(z).map(|(a, b)| a * b).sum()
    }

    /// `coeffs · z - bound`; positive means violated.
    pub fn violation(&self, z: &[f64]) -> f64 {
        self.value(z) - self.bound
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
            bound: self.bound * factor,
            tag: self.tag,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub dim: usize,
    /// Row-major `dim × dim` symmetric positive semidefinite matrix.
    pub cost_matrix: Vec<f64>,
    pub cost_vector: Vec<f64>,
    pub inequalities: Vec<LinearInequality>,
    pub ridge: f64,
}

impl QuadraticProgram {
    pub fn new(dim: usize, cost_matrix: Vec<f64>, cost_vector: Vec<f64>) -> Self {
        Self {
            dim,
            cost_matrix,
            cost_vector,
            inequalities: Vec::new(),
            ridge: DEFAULT_RIDGE,
        }
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn push(&mut self, row: LinearInequality) {
        self.inequalities.push(row);
    }

    pub fn extend<I: IntoIterator<Item = LinearInequality>>(&mut self, rows: I) {
        self.inequalities.extend(rows);
    }

    /// Cost matrix with the ridge applied.
    pub fn effective_cost(&self) -> DMatrix<f64> {
        let mut q = DMatrix::from_row_slice(self.dim, self.dim, &self.cost_matrix);
        for i in 0..self.dim {
            q[(i, i)] += self.ridge;
        }
        q
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let q = self.effective_cost();
        let zv = DVector::from_column_slice(z);
        0.5 * zv.dot(&(&q * &zv)) + self.cost_vector.iter().zip(z).map(|(c, x)| c * x).sum::<f64>()
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.dim;
        if n == 0 {
            return Err(QpError::Dimension("zero-dimensional problem".into()));
        }
        if self.cost_matrix.len() != n * n {
            return Err(QpError::Dimension(format!(
                "cost matrix has {} entries, expected {}",
                self.cost_matrix.len(),
                n * n
            )));
        }
        if self.cost_vector.len() != n {
            return Err(QpError::Dimension(format!(
                "cost vector has {} entries, expected {n}",
                self.cost_vector.len()
            )));
        }
        if let Some((i, row)) = self.inequalities.iter().enumerate().find(|(_, r)| r.coeffs.len() != n) {
            return Err(QpError::Dimension(format!(
                "row {i} ({}) has {} coefficients, expected {n}",
                row.tag,
                row.coeffs.len()
            )));
        }
        let finite = self.cost_matrix.iter().chain(&self.cost_vector).all(|v| v.is_finite())
            && self
                .inequalities
                .iter()
                .all(|r| r.bound.is_finite() && r.coeffs.iter().all(|c| c.is_finite()));
        if !finite {
            return Err(QpError::NonFinite);
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(QpError::NonFinite);
        }
        let scale = self.cost_matrix.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.cost_matrix[i * n + j] - self.cost_matrix[j * n + i]).abs() > 1e-12 * scale {
                    return Err(QpError::NotSymmetric);
                }
            }
        }
        let mut shifted = DMatrix::from_row_slice(n, n, &self.cost_matrix);
        for i in 0..n {
            shifted[(i, i)] += 1e-12 * scale;
        }
        if shifted.cholesky().is_none() {
            let q = DMatrix::from_row_slice(n, n, &self.cost_matrix);
            let min_eigenvalue = q.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
            return Err(QpError::NotPositiveSemidefinite { min_eigenvalue });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

impl fmt::Display for QpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    /// Minimiser when optimal; the least-violating phase-1 point otherwise.
    pub z: Vec<f64>,
    pub status: QpStatus,
    /// One multiplier per inequality, all non-negative.
    pub multipliers: Vec<f64>,
    /// KKT residual of an optimal solution, `INFINITY` when infeasible.
    pub kkt_residual: f64,
    /// Phase-1 value: an upper bound on the smallest achievable maximum row
    /// violation. Infeasibility is declared when this exceeds [`FEASIBILITY_TOL`].
    pub min_violation: f64,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry in problem data")]
    NonFinite,
    #[error("cost matrix is not symmetric")]
    NotSymmetric,
    #[error("cost matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    #[error("active-set iteration limit reached after {0} iterations")]
    IterationLimit(usize),
    #[error("singular KKT system")]
    SingularKkt,
}

struct Rows<'a> {
    a: &'a [Vec<f64>],
    b: &'a [f64],
}

struct ActiveSetResult {
    z: DVector<f64>,
    multipliers: Vec<f64>,
    iterations: usize,
}

/// Primal active-set iteration for `min 1/2 z'Gz + c'z, s.t. rows`, started
/// from a point that satisfies every row to within [`FEASIBILITY_TOL`].
fn active_set(
    g_mat: &DMatrix<f64>,
    c: &DVector<f64>,
    rows: &Rows<'_>,
    z0: DVector<f64>,
    max_iter: usize,
) -> Result<ActiveSetResult, QpError> {
    let n = c.len();
    let m = rows.a.len();
    let mut z = z0;
    let mut working: Vec<usize> = Vec::new();
    let mut iterations = 0;
    // after an unblocked full step the iterate minimises over the working set
    let mut full_step = false;
    let dot = |row: &[f64], v: &DVector<f64>| row.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>();
    let row_norms: Vec<f64> = rows.a.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();

    loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(QpError::IterationLimit(max_iter));
        }
        let k = working.len();
        let mut kkt = DMatrix::<f64>::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(g_mat);
        for (j, &row) in working.iter().enumerate() {
            for (col, &val) in rows.a[row].iter().enumerate() {
                kkt[(n + j, col)] = val;
                kkt[(col, n + j)] = val;
            }
        }
        let grad = g_mat * &z + c;
        let mut rhs = DVector::<f64>::zeros(n + k);
        for i in 0..n {
            rhs[i] = -grad[i];
        }
        let sol = kkt.lu().solve(&rhs).ok_or(QpError::SingularKkt)?;
        let p = sol.rows(0, n).into_owned();
        let lambda = sol.rows(n, k).into_owned();

        let z_scale = 1.0 + z.amax();
        if full_step || p.amax() <= 1e-12 * z_scale {
            full_step = false;
            // stationary on the working set: check multiplier signs
            let mut worst: Option<(usize, f64)> = None;
            for (j, &l) in lambda.iter().enumerate() {
                if l < -1e-12 {
                    let better = match worst {
                        None => true,
                        Some((wj, wl)) => l < wl || (l == wl && working[j] < working[wj]),
                    };
                    if better {
                        worst = Some((j, l));
                    }
                }
            }
            match worst {
                Some((j, _)) => {
                    working.remove(j);
                }
                None => {
                    let mut multipliers = vec![0.0; m];
                    for (j, &row) in working.iter().enumerate() {
                        multipliers[row] = lambda[j].max(0.0);
                    }
                    return Ok(ActiveSetResult { z, multipliers, iterations });
                }
            }
        } else {
            let mut alpha = 1.0;
            let mut blocking = None;
            let p_norm = p.norm();
            for i in 0..m {
                if working.contains(&i) {
                    continue;
                }
                let ap = dot(&rows.a[i], &p);
                // rows nearly orthogonal to the step cannot block it
                if ap > 1e-9 * row_norms[i] * p_norm {
                    let slack = (rows.b[i] - dot(&rows.a[i], &z)).max(0.0);
                    let t = slack / ap;
                    if t < alpha {
                        alpha = t;
                        blocking = Some(i);
                    }
                }
            }
            z += alpha * p;
            match blocking {
                Some(i) => working.push(i),
                None => full_step = true,
            }
        }
    }
}

/// Solves the problem, certifying either optimality or infeasibility.
pub fn solve(qp: &QuadraticProgram) -> Result<QpSolution, QpError> {
    qp.validate()?;
    let n = qp.dim;
    let m = qp.inequalities.len();
    let max_iter = 100 + 20 * m;

    // phase 1: minimise 1/2 (t + 1)^2 + prox/2 |z - center|^2 subject to a_i z - t <= b_i
    let a1: Vec<Vec<f64>> = qp
        .inequalities
        .iter()
        .map(|r| {
            let mut row = r.coeffs.clone();
            row.push(-1.0);
            row
        })
        .collect();
    let b: Vec<f64> = qp.inequalities.iter().map(|r| r.bound).collect();
    let mut g1 = DMatrix::<f64>::identity(n + 1, n + 1) * PHASE1_PROX;
    g1[(n, n)] = 1.0;
    let mut center = DVector::<f64>::zeros(n);
    let t0 = b.iter().map(|v| -v).fold(-1.0, f64::max);
    let mut point = DVector::<f64>::zeros(n + 1);
    point[n] = t0;
    let mut iterations = 0;
    let mut phase1_multipliers = vec![0.0; m];
    let rows1 = Rows { a: &a1, b: &b };
    for _ in 0..PHASE1_REFINEMENTS {
        let mut c1 = DVector::<f64>::zeros(n + 1);
        for i in 0..n {
            c1[i] = -PHASE1_PROX * center[i];
        }
        c1[n] = 1.0;
        let prev_t = point[n];
        let res = active_set(&g1, &c1, &rows1, point.clone(), max_iter)?;
        iterations += res.iterations;
        point = res.z;
        phase1_multipliers = res.multipliers;
        center = point.rows(0, n).into_owned();
        let t = point[n];
        if t <= FEASIBILITY_TOL || prev_t - t <= 1e-13 {
            break;
        }
    }
    let min_violation = point[n];
    if min_violation > FEASIBILITY_TOL {
        return Ok(QpSolution {
            z: point.rows(0, n).iter().cloned().collect(),
            status: QpStatus::Infeasible,
            multipliers: phase1_multipliers,
            kkt_residual: f64::INFINITY,
            min_violation,
            iterations,
        });
    }

    // phase 2 from the feasible phase-1 point
    let a: Vec<Vec<f64>> = qp.inequalities.iter().map(|r| r.coeffs.clone()).collect();
    let rows = Rows { a: &a, b: &b };
    let g = qp.effective_cost();
    let c = DVector::from_column_slice(&qp.cost_vector);
    let z0 = point.rows(0, n).into_owned();
    let res = active_set(&g, &c, &rows, z0, max_iter)?;
    iterations += res.iterations;
    let mut solution = QpSolution {
        z: res.z.iter().cloned().collect(),
        status: QpStatus::Optimal,
        multipliers: res.multipliers,
        kkt_residual: 0.0,
        min_violation,
        iterations,
    };
    solution.kkt_residual = kkt_residual(qp, &solution);
    Ok(solution)
}

/// Largest of the stationarity norm, primal violation, multiplier negativity
/// and complementarity product.
pub fn kkt_residual(qp: &QuadraticProgram, solution: &QpSolution) -> f64 {
    let n = qp.dim;
    let q = qp.effective_cost();
    let z = DVector::from_column_slice(&solution.z);
    let mut grad = &q * &z + DVector::from_column_slice(&qp.cost_vector);
    let mut worst = 0.0f64;
    for (row, &lambda) in qp.inequalities.iter().zip(&solution.multipliers) {
        for i in 0..n {
            grad[i] += lambda * row.coeffs[i];
        }
        let slack = row.bound - row.value(&solution.z);
        worst = worst.max(-slack).max(-lambda).max((lambda * slack).abs());
    }
    worst.max(grad.amax())
}
