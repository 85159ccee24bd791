//! Independent reference computations shared by the integration tests and
//! the acceptance suite.
#![allow(dead_code)]

use mpc_i4c::gp::{se_kernel, GpHyperparams, Standardization};
use mpc_i4c::linsys::{DtStateSpace, Mat, Vector};
use mpc_i4c::mpc::{build_prediction, build_qp, MpcBounds, MpcConfig, MpcWeights, QpContext, QpProblem};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A random MPC problem with outputs `[u; y]` (one input, two outputs) and
/// its condensed QP.
pub struct RandomMpc {
    pub model: DtStateSpace,
    pub config: MpcConfig,
    pub state: Vector,
    pub prev_u: Vec<f64>,
    pub refs: Vec<Vec<f64>>,
    pub qp: QpProblem,
}

fn maybe_bound(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> (f64, f64) {
    if rng.random_bool(0.2) {
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        (-rng.random_range(lo..hi), rng.random_range(lo..hi))
    }
}

pub fn random_mpc(rng: &mut ChaCha8Rng, max_np: usize) -> RandomMpc {
    let nx = rng.random_range(2..=4);
    let a = Mat::from_fn(nx, nx, |_, _| rng.random_range(-0.6..0.6));
    let b = Mat::from_fn(nx, 1, |_, _| rng.random_range(-1.0..1.0));
    let c = Mat::from_fn(3, nx, |_, _| rng.random_range(-1.0..1.0));
    let d = Mat::from_fn(3, 1, |i, _| if i == 0 { rng.random_range(0.5..1.5) } else { 0.0 });
    let model = DtStateSpace::new(a, b, c, d, 0.05).unwrap();

    let np = rng.random_range(1..=max_np);
    let nu = rng.random_range(1..=np);
    let (y0_lo, y0_hi) = maybe_bound(rng, 0.2, 2.0);
    let (y1_lo, y1_hi) = maybe_bound(rng, 0.2, 2.0);
    let (u_lo, u_hi) = maybe_bound(rng, 0.2, 3.0);
    let (du_lo, du_hi) = maybe_bound(rng, 0.1, 1.0);
    let config = MpcConfig {
        np,
        nu,
        weights: MpcWeights {
            q_y: vec![rng.random_range(0.05..2.0), rng.random_range(0.05..2.0)],
            q_u: vec![rng.random_range(0.01..0.5)],
            q_du: vec![rng.random_range(0.01..0.5)],
            q_eps: 10f64.powf(rng.random_range(1.0..3.0)),
            v_y: vec![rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)],
            v_u: vec![rng.random_range(0.5..2.0)],
            v_du: vec![rng.random_range(0.5..2.0)],
        },
        bounds: MpcBounds {
            y_min: vec![y0_lo, y1_lo],
            y_max: vec![y0_hi, y1_hi],
            u_min: vec![u_lo],
            u_max: vec![u_hi],
            du_min: vec![du_lo],
            du_max: vec![du_hi],
        },
        u_ref: vec![rng.random_range(-0.5..0.5)],
        t_mpc: 0.05,
    };
    let state = Vector::from_fn(nx, |_, _| rng.random_range(-3.0..3.0));
    let prev_u = vec![rng.random_range(-1.0..1.0)];
    let refs: Vec<Vec<f64>> = (0..np)
        .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let pred = build_prediction(&model, np, nu).unwrap();
    let qp = build_qp(&pred, &config, &QpContext { state: &state, prev_u: &prev_u, refs: &refs }).unwrap();
    RandomMpc { model, config, state, prev_u, refs, qp }
}

pub struct DualOracle {
    pub lambda: Vector,
    pub z: Vector,
    /// Lagrange dual value, a lower bound on the optimal objective.
    pub dual_value: f64,
    pub iterations: usize,
}

/// Accelerated projected-gradient ascent on the Lagrange dual of
/// `min ½zᵀHz + fᵀz s.t. Gz ≤ h`; the projection onto `λ ≥ 0` is exact.
///
/// Stops once the dual value reaches `target − tol` (if a target is given)
/// or after `max_iter` steps.
pub fn dual_projected_gradient(qp: &QpProblem, target: Option<f64>, tol: f64, max_iter: usize) -> DualOracle {
    let m = qp.g.nrows();
    let h_inv = qp.h.clone().cholesky().expect("oracle needs a positive definite Hessian").inverse();
    let z_of = |lam: &Vector| -(&h_inv * (&qp.f + qp.g.transpose() * lam));
    let dual = |lam: &Vector| {
        let z = z_of(lam);
        (qp.objective(&z) + lam.dot(&(&qp.g * &z - &qp.h_vec)), z)
    };
    if m == 0 {
        let (v, z) = dual(&Vector::zeros(0));
        return DualOracle { lambda: Vector::zeros(0), z, dual_value: v, iterations: 0 };
    }
    let q = &qp.g * &h_inv * qp.g.transpose();
    let lipschitz = q.symmetric_eigenvalues().max().max(1e-300);
    let step = 1.0 / lipschitz;

    let mut lam = Vector::zeros(m);
    let mut prev = lam.clone();
    let mut y = lam.clone();
    let mut t = 1.0_f64;
    let mut best = dual(&lam);
    let mut best_lam = lam.clone();
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let zy = z_of(&y);
        let grad = &qp.g * &zy - &qp.h_vec;
        lam = (&y + grad * step).map(|v| v.max(0.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        // gradient-based restart keeps the momentum from overshooting
        if (&lam - &prev).dot(&(&y - &lam)) > 0.0 {
            t = 1.0;
            y = lam.clone();
        } else {
            y = &lam + (&lam - &prev) * ((t - 1.0) / t_next);
            t = t_next;
        }
        prev = lam.clone();
        if it % 50 == 0 || it == max_iter {
            let d = dual(&lam);
            if d.0 > best.0 {
                best = d;
                best_lam = lam.clone();
            }
            if let Some(p) = target {
                if best.0 >= p - tol {
                    break;
                }
            }
        }
    }
    DualOracle { lambda: best_lam, z: best.1, dual_value: best.0, iterations: it }
}

/// GP posterior by explicit matrix inversion, in cost units.
pub fn dense_gp_posterior(points: &[Vec<f64>], costs: &[f64], hyper: &GpHyperparams, x: &[f64]) -> (f64, f64) {
    let n = points.len();
    let st = Standardization::of(costs);
    let y = Vector::from_iterator(n, costs.iter().map(|&c| st.apply(c)));
    let mut k = Mat::from_fn(n, n, |i, j| se_kernel(&points[i], &points[j], hyper));
    for i in 0..n {
        k[(i, i)] += hyper.sigma_e * hyper.sigma_e;
    }
    let k_inv = k.try_inverse().expect("invertible kernel matrix");
    let ks = Vector::from_iterator(n, points.iter().map(|p| se_kernel(x, p, hyper)));
    let mean = ks.dot(&(&k_inv * &y));
    let var = se_kernel(x, x, hyper) - ks.dot(&(&k_inv * &ks)) + hyper.sigma_e * hyper.sigma_e;
    (st.mean + st.scale * mean, var * st.scale * st.scale)
}

/// `E[max(0, j_best − J)]` for `J ~ N(mean, std²)` by plain Monte Carlo.
pub fn monte_carlo_ei(mean: f64, std: f64, j_best: f64, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let mut acc = 0.0;
    for _ in 0..samples {
        let z: f64 = StandardNormal.sample(rng);
        acc += (j_best - (mean + std * z)).max(0.0);
    }
    acc / samples as f64
}
