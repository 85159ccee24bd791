//! Soft-constrained tracking MPC in condensed form.
//!
//! The prediction model maps the command `g` to stacked outputs `[u; y]`
//! (controller output first, plant outputs second). Over `N_p` steps the
//! outputs are affine in the current state and in the `N_u` free moves; for
//! `k ≥ N_u` the last move is held (move blocking). A single scalar slack
//! `ε ≥ 0`, weighted by `Q_ε ε²`, softens every output, input and input-rate
//! bound so the QP is always feasible.

pub mod qp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linsys::{DtStateSpace, Mat, Vector};
pub use qp::{solve_qp, KktResiduals, QpProblem, QpSolution, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("invalid MPC configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Cost weights and slack softening vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcWeights {
    pub q_y: Vec<f64>,
    pub q_u: Vec<f64>,
    pub q_du: Vec<f64>,
    pub q_eps: f64,
    pub v_y: Vec<f64>,
    pub v_u: Vec<f64>,
    pub v_du: Vec<f64>,
}

/// Output, input and input-rate bounds; infinite entries are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcBounds {
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub du_min: Vec<f64>,
    pub du_max: Vec<f64>,
}

impl MpcBounds {
    pub fn unbounded(n_y: usize, n_u: usize) -> Self {
        Self {
            y_min: vec![f64::NEG_INFINITY; n_y],
            y_max: vec![f64::INFINITY; n_y],
            u_min: vec![f64::NEG_INFINITY; n_u],
            u_max: vec![f64::INFINITY; n_u],
            du_min: vec![f64::NEG_INFINITY; n_u],
            du_max: vec![f64::INFINITY; n_u],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub np: usize,
    pub nu: usize,
    pub weights: MpcWeights,
    pub bounds: MpcBounds,
    pub u_ref: Vec<f64>,
    /// MPC sample time (s).
    pub t_mpc: f64,
}

impl MpcConfig {
    pub fn n_y(&self) -> usize {
        self.weights.q_y.len()
    }

    pub fn n_u(&self) -> usize {
        self.weights.q_u.len()
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let err = |m: &str| Err(MpcError::Config(m.to_string()));
        if self.nu == 0 || self.nu > self.np {
            return err("require 1 <= nu <= np");
        }
        if !(self.t_mpc > 0.0) {
            return err("t_mpc must be > 0");
        }
        let (ny, nu) = (self.n_y(), self.n_u());
        let w = &self.weights;
        let b = &self.bounds;
        let lens_ok = w.v_y.len() == ny
            && w.q_du.len() == nu
            && w.v_u.len() == nu
            && w.v_du.len() == nu
            && b.y_min.len() == ny
            && b.y_max.len() == ny
            && [&b.u_min, &b.u_max, &b.du_min, &b.du_max, &self.u_ref]
                .iter()
                .all(|v| v.len() == nu);
        if !lens_ok {
            return err("weight, bound and reference lengths disagree");
        }
        if w.q_y.iter().chain(&w.q_u).chain(&w.q_du).any(|q| !(*q >= 0.0)) {
            return err("weights Q_y, Q_u, Q_du must be >= 0");
        }
        if !(w.q_eps > 0.0) {
            return err("Q_eps must be > 0");
        }
        if w.v_y.iter().chain(&w.v_u).chain(&w.v_du).any(|v| !(*v > 0.0)) {
            return err("softening vectors V must be > 0");
        }
        let ordered = |lo: &[f64], hi: &[f64]| lo.iter().zip(hi).all(|(l, h)| l < h);
        if !ordered(&b.y_min, &b.y_max) || !ordered(&b.u_min, &b.u_max) || !ordered(&b.du_min, &b.du_max) {
            return err("bounds must satisfy min < max");
        }
        Ok(())
    }
}

/// Condensed prediction `out = Φ ξ + Γ z_g` over `k = 1..N_p`.
///
/// Rows are grouped per step (`n_out` rows each); columns of `Γ` are grouped
/// per free move (`n_g` columns each).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub phi: Mat,
    pub gamma: Mat,
    pub np: usize,
    pub nu: usize,
    pub n_out: usize,
    pub n_g: usize,
}

/// Index of the free move driving the input at step `j` (0-based).
fn move_index(j: usize, nu: usize) -> usize {
    j.min(nu - 1)
}

/// Stack the free and forced responses over the horizon.
///
/// The move applied at step `j` is `z_{min(j, N_u−1)}`; outputs at step `k`
/// include the direct feedthrough of the move applied at `k`.
pub fn build_prediction(model: &DtStateSpace, np: usize, nu: usize) -> Result<Prediction, MpcError> {
    if nu == 0 || nu > np {
        return Err(MpcError::Config("require 1 <= nu <= np".into()));
    }
    let nx = model.n_states();
    let nout = model.n_outputs();
    let ng = model.n_inputs();

    // Markov parameters C A^i B for i = 0..np-1.
    let mut markov: Vec<Mat> = Vec::with_capacity(np);
    let mut a_pow_b = model.b.clone();
    for _ in 0..np {
        markov.push(&model.c * &a_pow_b);
        a_pow_b = &model.a * &a_pow_b;
    }

    let mut phi = Mat::zeros(np * nout, nx);
    let mut gamma = Mat::zeros(np * nout, nu * ng);
    let mut a_pow = model.a.clone();
    for k in 1..=np {
        let row = (k - 1) * nout;
        phi.view_mut((row, 0), (nout, nx)).copy_from(&(&model.c * &a_pow));
        a_pow = &model.a * &a_pow;
        // out(k) = C A^k ξ + Σ_{j<k} C A^{k-1-j} B g(j) + D g(k)
        for j in 0..k {
            let col = move_index(j, nu) * ng;
            let mut blk = gamma.view_mut((row, col), (nout, ng));
            blk += &markov[k - 1 - j];
        }
        let col = move_index(k, nu) * ng;
        let mut blk = gamma.view_mut((row, col), (nout, ng));
        blk += &model.d;
    }
    Ok(Prediction { phi, gamma, np, nu, n_out: nout, n_g: ng })
}

/// Per-step quantities entering the QP besides the fixed prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct QpContext<'a> {
    /// Current state of the prediction model.
    pub state: &'a Vector,
    /// Input applied in the previous period (first `Δu` term).
    pub prev_u: &'a [f64],
    /// Output references for `k = 1..N_p`.
    pub refs: &'a [Vec<f64>],
}

/// Relative ridge added to the command block of the Hessian so that the
/// dual active-set solver sees a strictly convex problem.
pub const HESSIAN_RIDGE: f64 = 1e-10;

/// Assemble `½ zᵀHz + fᵀz` and `G z ≤ h` over `z = [g-moves; ε]`.
pub fn build_qp(pred: &Prediction, cfg: &MpcConfig, ctx: &QpContext<'_>) -> Result<QpProblem, MpcError> {
    let n_u = cfg.n_u();
    let n_y = cfg.n_y();
    if n_u + n_y != pred.n_out {
        return Err(MpcError::Dimension(format!(
            "model has {} outputs, config expects {} inputs + {} outputs",
            pred.n_out, n_u, n_y
        )));
    }
    if ctx.refs.len() != pred.np || ctx.refs.iter().any(|r| r.len() != n_y) {
        return Err(MpcError::Dimension("reference must have np rows of n_y entries".into()));
    }
    if ctx.prev_u.len() != n_u || ctx.state.len() != pred.phi.ncols() {
        return Err(MpcError::Dimension("state or previous input has wrong length".into()));
    }
    let nz_g = pred.nu * pred.n_g;
    let nz = nz_g + 1;
    let eps = nz_g;
    let free = &pred.phi * ctx.state;

    // Each predicted signal is an affine function a·z + c.
    let signal = |k: usize, i: usize| -> (Vector, f64) {
        let r = (k - 1) * pred.n_out + i;
        let mut a = Vector::zeros(nz);
        a.rows_mut(0, nz_g).copy_from(&pred.gamma.row(r).transpose());
        (a, free[r])
    };

    let mut h = Mat::zeros(nz, nz);
    let mut f = Vector::zeros(nz);
    let mut add_sq = |w: f64, a: &Vector, c: f64, target: f64| {
        if w == 0.0 {
            return;
        }
        // w (aᵀz + c − target)²
        h.ger(2.0 * w, a, a, 1.0);
        f.axpy(2.0 * w * (c - target), a, 1.0);
    };

    let w = &cfg.weights;
    let b = &cfg.bounds;
    let mut rows: Vec<(Vector, f64)> = Vec::new();
    for k in 1..=pred.np {
        for i in 0..n_y {
            let (a, c) = signal(k, n_u + i);
            add_sq(w.q_y[i], &a, c, ctx.refs[k - 1][i]);
            push_soft(&mut rows, &a, c, b.y_min[i], b.y_max[i], w.v_y[i], eps);
        }
        for i in 0..n_u {
            let (a, c) = signal(k, i);
            add_sq(w.q_u[i], &a, c, cfg.u_ref[i]);
            push_soft(&mut rows, &a, c, b.u_min[i], b.u_max[i], w.v_u[i], eps);
            let (da, dc) = if k == 1 {
                (a.clone(), c - ctx.prev_u[i])
            } else {
                let (ap, cp) = signal(k - 1, i);
                (&a - &ap, c - cp)
            };
            add_sq(w.q_du[i], &da, dc, 0.0);
            push_soft(&mut rows, &da, dc, b.du_min[i], b.du_max[i], w.v_du[i], eps);
        }
    }
    h[(eps, eps)] += 2.0 * w.q_eps;
    let diag_max = (0..nz_g).map(|i| h[(i, i)]).fold(0.0, f64::max);
    let ridge = if diag_max > 0.0 { HESSIAN_RIDGE * diag_max } else { HESSIAN_RIDGE };
    for i in 0..nz_g {
        h[(i, i)] += ridge;
    }
    // ε ≥ 0
    let mut e_row = Vector::zeros(nz);
    e_row[eps] = -1.0;
    rows.push((e_row, 0.0));

    let g = Mat::from_fn(rows.len(), nz, |r, c| rows[r].0[c]);
    let h_vec = Vector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    Ok(QpProblem { h: 0.5 * (&h + h.transpose()), f, g, h_vec })
}

/// Push `lo − vε ≤ aᵀz + c ≤ hi + vε` as up to two `≤` rows.
fn push_soft(rows: &mut Vec<(Vector, f64)>, a: &Vector, c: f64, lo: f64, hi: f64, v: f64, eps: usize) {
    if hi.is_finite() {
        let mut r = a.clone();
        r[eps] = -v;
        rows.push((r, hi - c));
    }
    if lo.is_finite() {
        let mut r = -a;
        r[eps] = -v;
        rows.push((r, c - lo));
    }
}

/// Result of one receding-horizon step.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutput {
    /// First move, applied until the next MPC instant.
    pub g: Vector,
    pub epsilon: f64,
    pub status: QpStatus,
    pub solution: QpSolution,
}

impl MpcOutput {
    pub fn is_degraded(&self) -> bool {
        self.status != QpStatus::Solved
    }
}

/// Receding-horizon controller with cached prediction matrices and a warm
/// start from the previous active set.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub model: DtStateSpace,
    pub config: MpcConfig,
    pred: Prediction,
    warm: Vec<usize>,
}

impl MpcController {
    pub fn new(model: DtStateSpace, config: MpcConfig) -> Result<Self, MpcError> {
        config.validate()?;
        if (model.sample_time - config.t_mpc).abs() > 1e-9 * config.t_mpc {
            return Err(MpcError::Config(format!(
                "model sample time {} differs from t_mpc {}",
                model.sample_time, config.t_mpc
            )));
        }
        let pred = build_prediction(&model, config.np, config.nu)?;
        if pred.n_out != config.n_u() + config.n_y() {
            return Err(MpcError::Dimension("model outputs must be [u; y]".into()));
        }
        Ok(Self { model, config, pred, warm: Vec::new() })
    }

    pub fn prediction(&self) -> &Prediction {
        &self.pred
    }

    /// Build and solve the QP at the current state and return the first move.
    pub fn step(&mut self, state: &Vector, prev_u: &[f64], refs: &[Vec<f64>]) -> Result<MpcOutput, MpcError> {
        let qp = build_qp(&self.pred, &self.config, &QpContext { state, prev_u, refs })?;
        let sol = solve_qp(&qp, Some(&self.warm));
        self.warm = sol.active_set.clone();
        let ng = self.pred.n_g;
        let g = sol.z.rows(0, ng).into_owned();
        let epsilon = sol.z[self.pred.nu * ng];
        Ok(MpcOutput { g, epsilon, status: sol.status, solution: sol })
    }

    /// Constant reference over the horizon.
    pub fn constant_refs(&self, r: &[f64]) -> Vec<Vec<f64>> {
        vec![r.to_vec(); self.config.np]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_model() -> DtStateSpace {
        // outputs [u; y]: u = g, y = first state
        DtStateSpace::new(
            Mat::from_row_slice(2, 2, &[0.9, 0.2, 0.0, 0.7]),
            Mat::from_row_slice(2, 1, &[0.0, 1.0]),
            Mat::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            Mat::from_row_slice(2, 1, &[1.0, 0.0]),
            0.05,
        )
        .unwrap()
    }

    fn toy_config(np: usize, nu: usize) -> MpcConfig {
        MpcConfig {
            np,
            nu,
            weights: MpcWeights {
                q_y: vec![1.0],
                q_u: vec![0.0],
                q_du: vec![0.1],
                q_eps: 1e5,
                v_y: vec![1.0],
                v_u: vec![1.0],
                v_du: vec![1.0],
            },
            bounds: MpcBounds::unbounded(1, 1),
            u_ref: vec![0.0],
            t_mpc: 0.05,
        }
    }

    #[test]
    fn memoryless_model_prediction_structure() {
        let m = DtStateSpace::new(Mat::zeros(2, 2), Mat::identity(2, 2), Mat::identity(2, 2), Mat::zeros(2, 2), 1.0).unwrap();
        let p = build_prediction(&m, 4, 4).unwrap();
        assert_eq!(p.phi, Mat::zeros(8, 2));
        // out(k) = g(k-1): Γ has identity blocks on the first subdiagonal.
        for k in 1..=4 {
            for j in 0..4 {
                let blk = p.gamma.view(((k - 1) * 2, j * 2), (2, 2));
                if j + 1 == k {
                    assert_eq!(blk, Mat::identity(2, 2));
                } else {
                    assert_eq!(blk, Mat::zeros(2, 2));
                }
            }
        }
    }

    #[test]
    fn full_horizon_gamma_is_block_lower_triangular() {
        let m = toy_model();
        let p = build_prediction(&DtStateSpace { d: Mat::zeros(2, 1), ..m }, 6, 6).unwrap();
        for k in 1..=6 {
            for j in k..6 {
                assert_eq!(p.gamma.view(((k - 1) * 2, j), (2, 1)).amax(), 0.0);
            }
        }
    }

    #[test]
    fn zero_state_zero_reference_gives_zero_move() {
        let mut c = MpcController::new(toy_model(), toy_config(8, 3)).unwrap();
        let r = c.constant_refs(&[0.0]);
        let out = c.step(&Vector::zeros(2), &[0.0], &r).unwrap();
        assert!(out.g.amax() < 1e-12);
        assert!(out.epsilon.abs() < 1e-12);
    }

    #[test]
    fn unconstrained_solution_solves_normal_equations() {
        let mut cfg = toy_config(6, 6);
        cfg.weights.q_du = vec![0.0];
        let p = build_prediction(&toy_model(), 6, 6).unwrap();
        let x = Vector::from_vec(vec![1.0, -0.5]);
        let refs = vec![vec![0.2]; 6];
        let qp = build_qp(&p, &cfg, &QpContext { state: &x, prev_u: &[0.0], refs: &refs }).unwrap();
        let s = solve_qp(&qp, None);
        assert!(s.is_solved());
        let resid = &qp.h * &s.z + &qp.f;
        assert!(resid.amax() < 1e-9);
        // Least squares on the y rows only.
        let y_rows: Vec<usize> = (0..6).map(|k| k * 2 + 1).collect();
        let gy = p.gamma.select_rows(&y_rows);
        let target: Vector = Vector::from_element(6, 0.2) - (&p.phi * &x).select_rows(&y_rows);
        let ls = gy.clone().svd(true, true).solve(&target, 1e-14).unwrap();
        let pred_ls = &gy * &ls;
        let pred_qp = &gy * s.z.rows(0, 6);
        assert_relative_eq!(pred_ls, pred_qp, epsilon = 1e-6);
    }

    #[test]
    fn tight_output_bound_activates_slack() {
        let mut cfg = toy_config(10, 2);
        cfg.bounds.y_max = vec![0.1];
        cfg.bounds.y_min = vec![-0.1];
        cfg.bounds.u_max = vec![0.01];
        cfg.bounds.u_min = vec![-0.01];
        let mut c = MpcController::new(toy_model(), cfg).unwrap();
        let r = c.constant_refs(&[0.0]);
        let out = c.step(&Vector::from_vec(vec![2.0, 0.0]), &[0.0], &r).unwrap();
        assert!(out.status == QpStatus::Solved);
        assert!(out.epsilon > 1e-3);
    }

    #[test]
    fn config_validation() {
        let mut c = toy_config(5, 6);
        assert!(c.validate().is_err());
        c = toy_config(5, 5);
        c.weights.q_eps = 0.0;
        assert!(c.validate().is_err());
        c = toy_config(5, 5);
        c.bounds.u_min = vec![1.0];
        c.bounds.u_max = vec![0.0];
        assert!(c.validate().is_err());
        assert!(toy_config(5, 5).validate().is_ok());
        assert!(MpcController::new(toy_model(), MpcConfig { t_mpc: 0.1, ..toy_config(5, 5) }).is_err());
    }
}
