//! Dense strictly convex QP solver.
//!
//! Solves `min ½ zᵀHz + fᵀz  s.t.  G z ≤ h` with the Goldfarb–Idnani dual
//! active-set method. The method starts from the unconstrained minimizer and
//! adds violated constraints one at a time while keeping the iterate dual
//! feasible, so it needs no feasible starting point. A warm-start hint (the
//! previous active set) decides which violated constraint enters first.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linsys::{Mat, Vector};

/// KKT tolerance on scaled residuals.
pub const KKT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Symmetric positive definite Hessian.
    pub h: Mat,
    pub f: Vector,
    /// Inequality rows `G z ≤ h`.
    pub g: Mat,
    pub h_vec: Vector,
}

impl QpProblem {
    pub fn n_vars(&self) -> usize {
        self.f.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.h_vec.len()
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f.dot(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Solved,
    /// Iteration cap reached; the best iterate is returned.
    MaxIter,
    /// Hessian not positive definite.
    NotConvex,
    /// A constraint could not be added (primal infeasible).
    Infeasible,
}

/// Scaled KKT residuals (all dimensionless).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub dual: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.complementarity)
            .max(self.dual)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: Vector,
    /// Multipliers of `G z ≤ h` (non-negative).
    pub lambda: Vector,
    pub objective: f64,
    pub residuals: KktResiduals,
    pub iterations: usize,
    pub status: QpStatus,
    /// Indices of constraints active at the solution.
    pub active_set: Vec<usize>,
}

impl QpSolution {
    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }
}

/// Residuals of the KKT system for a candidate primal/dual pair.
///
/// Each residual is normalized by the magnitude of the terms it balances so
/// that the tolerance is meaningful across weight scalings.
pub fn kkt_residuals(qp: &QpProblem, z: &Vector, lambda: &Vector) -> KktResiduals {
    let hz = &qp.h * z;
    let gtl = qp.g.transpose() * lambda;
    let stat = &hz + &qp.f + &gtl;
    let stat_scale = 1.0_f64.max(hz.amax()).max(qp.f.amax()).max(gtl.amax());
    let gz = &qp.g * z;
    let mut primal = 0.0_f64;
    let mut comp = 0.0_f64;
    let mut dual = 0.0_f64;
    for i in 0..qp.n_constraints() {
        let row_norm = qp.g.row(i).norm();
        let scale = 1.0_f64.max(qp.h_vec[i].abs()).max(row_norm * z.amax());
        let slack = qp.h_vec[i] - gz[i];
        primal = primal.max((-slack).max(0.0) / scale);
        let li = lambda[i];
        dual = dual.max((-li).max(0.0) / stat_scale);
        comp = comp.max((li * slack).abs() / (scale * stat_scale.max(li.abs() * row_norm.max(1.0))));
    }
    KktResiduals {
        stationarity: stat.amax() / stat_scale,
        primal,
        complementarity: comp,
        dual,
    }
}

/// Solve the QP. `warm` lists constraints that were active last time.
///
/// Iterations are capped at `50 · max(1, m)` constraint additions/removals.
pub fn solve_qp(qp: &QpProblem, warm: Option<&[usize]>) -> QpSolution {
    let n = qp.n_vars();
    let m = qp.n_constraints();
    let max_iter = 50 * m.max(1);

    let chol = match qp.h.clone().cholesky() {
        Some(c) => c,
        None => {
            return QpSolution {
                z: Vector::zeros(n),
                lambda: Vector::zeros(m),
                objective: f64::NAN,
                residuals: KktResiduals::default(),
                iterations: 0,
                status: QpStatus::NotConvex,
                active_set: Vec::new(),
            }
        }
    };

    // Constraints in `nᵢᵀ z ≥ cᵢ` form with unit-norm rows.
    let mut normals: Vec<Vector> = Vec::with_capacity(m);
    let mut offsets = Vec::with_capacity(m);
    let mut row_scale = Vec::with_capacity(m);
    for i in 0..m {
        let row: Vector = -qp.g.row(i).transpose();
        let nrm = row.norm();
        let s = if nrm > 0.0 { 1.0 / nrm } else { 1.0 };
        normals.push(row * s);
        offsets.push(-qp.h_vec[i] * s);
        row_scale.push(s);
    }

    // J = L⁻ᵀ, later J = L⁻ᵀ Q as constraints enter.
    let l = chol.l();
    let l_inv = l
        .clone()
        .solve_lower_triangular(&Mat::identity(n, n))
        .expect("cholesky factor is nonsingular");
    let mut j_mat: Mat = l_inv.transpose();
    let mut r_mat = Mat::zeros(n, n);
    let mut z: Vector = -chol.solve(&qp.f);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut hint: Vec<usize> = warm.map(|w| w.iter().copied().filter(|&i| i < m).collect()).unwrap_or_default();
    let mut iterations = 0;
    let mut status = QpStatus::Solved;
    let feas_tol = 1e-12;

    let violation = |z: &Vector, i: usize| -> f64 { normals[i].dot(z) - offsets[i] };
    let viol_tol = |i: usize| feas_tol * (1.0 + offsets[i].abs());

    'outer: loop {
        // Pick a violated constraint: hinted ones first, then most violated.
        let mut pick: Option<usize> = None;
        while let Some(&cand) = hint.first() {
            hint.remove(0);
            if !active.contains(&cand) && violation(&z, cand) < -viol_tol(cand) {
                pick = Some(cand);
                break;
            }
        }
        if pick.is_none() {
            let mut worst = 0.0;
            for i in 0..m {
                if active.contains(&i) {
                    continue;
                }
                let s = violation(&z, i);
                if s < -viol_tol(i) && s < worst {
                    worst = s;
                    pick = Some(i);
                }
            }
        }
        let Some(p) = pick else { break };
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                status = QpStatus::MaxIter;
                break 'outer;
            }
            let q = active.len();
            let d: Vector = j_mat.transpose() * &normals[p];
            // Primal step direction in the null space of the active set.
            let step: Vector = if q < n {
                j_mat.columns(q, n - q) * d.rows(q, n - q)
            } else {
                Vector::zeros(n)
            };
            // Dual step direction for the active multipliers.
            let r: Vector = if q > 0 {
                r_mat
                    .view((0, 0), (q, q))
                    .into_owned()
                    .solve_upper_triangular(&d.rows(0, q).into_owned())
                    .unwrap_or_else(|| Vector::zeros(q))
            } else {
                Vector::zeros(0)
            };

            let mut t1 = f64::INFINITY;
            let mut drop_k = None;
            for k in 0..q {
                if r[k] > 0.0 {
                    let ratio = u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_k = Some(k);
                    }
                }
            }
            let step_dot = step.dot(&normals[p]);
            let step_norm = step.amax();
            let t2 = if step_norm > 1e-14 * (1.0 + z.amax()) && step_dot > 0.0 {
                -violation(&z, p) / step_dot
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                status = QpStatus::Infeasible;
                break 'outer;
            }
            if t2.is_finite() {
                z += &step * t;
            }
            for k in 0..q {
                u[k] -= t * r[k];
            }
            u_p += t;

            if t2 <= t1 {
                // Full step: constraint p becomes active.
                add_constraint(&mut j_mat, &mut r_mat, &d, q, n);
                active.push(p);
                u.push(u_p);
                continue 'outer;
            }
            // Partial step: drop the blocking constraint and retry.
            let k = drop_k.expect("finite t1 has an argmin");
            drop_constraint(&mut j_mat, &mut r_mat, k, q, n);
            active.remove(k);
            u.remove(k);
        }
    }

    let mut lambda = Vector::zeros(m);
    for (&i, &ui) in active.iter().zip(&u) {
        lambda[i] = ui.max(0.0) * row_scale[i];
    }
    let residuals = kkt_residuals(qp, &z, &lambda);
    if status == QpStatus::Solved && residuals.max() > KKT_TOL {
        log::debug!("qp residuals above tolerance: {residuals:?}");
    }
    let mut active_set = active.clone();
    active_set.sort_unstable();
    QpSolution {
        objective: qp.objective(&z),
        z,
        lambda,
        residuals,
        iterations,
        status,
        active_set,
    }
}

/// Givens rotation zeroing `b` in `(a, b)`; returns `(c, s, r)`.
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        return (1.0, 0.0, a);
    }
    let r = a.hypot(b);
    (a / r, b / r, r)
}

/// Rotate `d[q..]` onto `d[q]`, applying the same rotations to `J`, and
/// append column `q` to `R`.
fn add_constraint(j: &mut Mat, r: &mut Mat, d: &Vector, q: usize, n: usize) {
    let mut d = d.clone();
    for i in (q + 1..n).rev() {
        let (c, s, rr) = givens(d[i - 1], d[i]);
        d[i - 1] = rr;
        d[i] = 0.0;
        if s == 0.0 {
            continue;
        }
        rotate_columns(j, i - 1, i, c, s);
    }
    for i in 0..=q.min(n - 1) {
        r[(i, q)] = d[i];
    }
}

/// Remove column `k` of the active set from `R` and restore triangularity.
fn drop_constraint(j: &mut Mat, r: &mut Mat, k: usize, q: usize, _n: usize) {
    for col in k..q - 1 {
        for row in 0..q {
            r[(row, col)] = r[(row, col + 1)];
        }
    }
    for row in 0..q {
        r[(row, q - 1)] = 0.0;
    }
    // Columns k..q-1 are now upper Hessenberg.
    for i in k..q - 1 {
        let (c, s, rr) = givens(r[(i, i)], r[(i + 1, i)]);
        r[(i, i)] = rr;
        r[(i + 1, i)] = 0.0;
        if s == 0.0 {
            continue;
        }
        for col in i + 1..q - 1 {
            let a = r[(i, col)];
            let b = r[(i + 1, col)];
            r[(i, col)] = c * a + s * b;
            r[(i + 1, col)] = -s * a + c * b;
        }
        rotate_columns(j, i, i + 1, c, s);
    }
}

fn rotate_columns(j: &mut DMatrix<f64>, a: usize, b: usize, c: f64, s: f64) {
    for row in 0..j.nrows() {
        let x = j[(row, a)];
        let y = j[(row, b)];
        j[(row, a)] = c * x + s * y;
        j[(row, b)] = -s * x + c * y;
    }
}

/// Convenience constructor for box-constrained test problems.
pub fn box_constraints(lower: &[f64], upper: &[f64]) -> (Mat, DVector<f64>) {
    let n = lower.len();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..n {
        if upper[i].is_finite() {
            let mut r = vec![0.0; n];
            r[i] = 1.0;
            rows.push(r);
            rhs.push(upper[i]);
        }
        if lower[i].is_finite() {
            let mut r = vec![0.0; n];
            r[i] = -1.0;
            rows.push(r);
            rhs.push(-lower[i]);
        }
    }
    let g = Mat::from_fn(rows.len(), n, |i, j| rows[i][j]);
    (g, DVector::from_vec(rhs))
}
