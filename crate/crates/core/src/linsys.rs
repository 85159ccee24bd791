//! Linear time-invariant state-space models.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinsysError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("sample times differ ({0} vs {1})")]
    SampleTime(f64, f64),
    #[error("sample time must be positive, got {0}")]
    InvalidSampleTime(f64),
    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),
}

fn check_dims(a: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Result<(), LinsysError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinsysError::Dimension(format!("A is {}x{}", a.nrows(), a.ncols())));
    }
    if b.nrows() != n {
        return Err(LinsysError::Dimension(format!("B has {} rows, A has {n}", b.nrows())));
    }
    if c.ncols() != n {
        return Err(LinsysError::Dimension(format!("C has {} cols, A has {n}", c.ncols())));
    }
    if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
        return Err(LinsysError::Dimension(format!(
            "D is {}x{}, expected {}x{}",
            d.nrows(),
            d.ncols(),
            c.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}

/// `ẋ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtStateSpace {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

impl CtStateSpace {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self, LinsysError> {
        check_dims(&a, &b, &c, &d)?;
        Ok(Self { a, b, c, d })
    }
}

/// `x⁺ = A x + B u`, `y = C x + D u`, sampled every `sample_time` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtStateSpace {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub sample_time: f64,
}

impl DtStateSpace {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat, sample_time: f64) -> Result<Self, LinsysError> {
        check_dims(&a, &b, &c, &d)?;
        if !(sample_time > 0.0 && sample_time.is_finite()) {
            return Err(LinsysError::InvalidSampleTime(sample_time));
        }
        Ok(Self { a, b, c, d, sample_time })
    }

    /// Static gain `y = D u` with no states.
    pub fn gain(d: Mat, sample_time: f64) -> Result<Self, LinsysError> {
        let (q, m) = d.shape();
        Self::new(Mat::zeros(0, 0), Mat::zeros(0, m), Mat::zeros(q, 0), d, sample_time)
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Output at the current state, then advance: returns `(y, x⁺)`.
    pub fn step(&self, x: &Vector, u: &Vector) -> (Vector, Vector) {
        let y = &self.c * x + &self.d * u;
        let xn = &self.a * x + &self.b * u;
        (y, xn)
    }

    /// `C (zI − A)⁻¹ B + D` at `z = e^{jωT}`.
    pub fn freq_response(&self, omega: f64) -> DMatrix<Complex64> {
        let z = Complex64::from_polar(1.0, omega * self.sample_time);
        self.transfer_at(z)
    }

    /// Transfer matrix evaluated at an arbitrary complex point `z`.
    pub fn transfer_at(&self, z: Complex64) -> DMatrix<Complex64> {
        let n = self.n_states();
        let to_c = |m: &Mat| m.map(|v| Complex64::new(v, 0.0));
        let d = to_c(&self.d);
        if n == 0 {
            return d;
        }
        let zi_a = DMatrix::<Complex64>::identity(n, n) * z - to_c(&self.a);
        let x = zi_a
            .lu()
            .solve(&to_c(&self.b))
            .unwrap_or_else(|| DMatrix::from_element(n, self.n_inputs(), Complex64::new(f64::NAN, f64::NAN)));
        to_c(&self.c) * x + d
    }

    /// Keep only the listed input columns.
    pub fn select_inputs(&self, cols: &[usize]) -> Result<Self, LinsysError> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.n_inputs()) {
            return Err(LinsysError::Dimension(format!("input {bad} out of range")));
        }
        let b = self.b.select_columns(cols);
        let d = self.d.select_columns(cols);
        Self::new(self.a.clone(), b, self.c.clone(), d, self.sample_time)
    }

    /// Left-multiply outputs by `sel` (`y' = sel y`).
    pub fn map_outputs(&self, sel: &Mat) -> Result<Self, LinsysError> {
        if sel.ncols() != self.n_outputs() {
            return Err(LinsysError::Dimension("output map width".into()));
        }
        Self::new(self.a.clone(), self.b.clone(), sel * &self.c, sel * &self.d, self.sample_time)
    }

    /// Right-multiply inputs by `sel` (`u = sel u'`).
    pub fn map_inputs(&self, sel: &Mat) -> Result<Self, LinsysError> {
        if sel.nrows() != self.n_inputs() {
            return Err(LinsysError::Dimension("input map height".into()));
        }
        Self::new(self.a.clone(), &self.b * sel, self.c.clone(), &self.d * sel, self.sample_time)
    }

    pub fn is_finite(&self) -> bool {
        [&self.a, &self.b, &self.c, &self.d]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }
}

/// Discrete PID `θ_P + θ_I T/(z−1) + θ_D N_d / (1 + N_d T/(z−1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidParams {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Derivative filter coefficient `N_d`.
    pub nd: f64,
    pub ts: f64,
}

/// Two-state controller-form realization of the PID.
///
/// State 0 is the integral term `I⁺ = I + θ_I T e`; state 1 is the filtered
/// error `x⁺ = (1 − N_d T) x + N_d T e`. The output is
/// `u = I − θ_D N_d x + (θ_P + θ_D N_d) e`. Both states keep their meaning
/// when the same gains are realized at a different sample time.
pub fn pid_realization(pid: &PidParams) -> DtStateSpace {
    let t = pid.ts;
    let ndt = pid.nd * t;
    let a = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0 - ndt]);
    let b = Mat::from_row_slice(2, 1, &[pid.ki * t, ndt]);
    let c = Mat::from_row_slice(1, 2, &[1.0, -pid.kd * pid.nd]);
    let d = Mat::from_element(1, 1, pid.kp + pid.kd * pid.nd);
    DtStateSpace { a, b, c, d, sample_time: t }
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &Mat) -> Mat {
    let n = a.nrows();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if !norm1.is_finite() {
        return Mat::from_element(n, n, f64::NAN);
    }
    let squarings = if norm1 > 0.5 {
        (norm1 / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings as i32);
    let mut sum = Mat::identity(n, n);
    let mut term = Mat::identity(n, n);
    for k in 1..=40 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if term.amax() <= f64::EPSILON * sum.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Zero-order-hold discretization via the exponential of `[[A, B], [0, 0]] T`.
pub fn c2d_zoh(ct: &CtStateSpace, ts: f64) -> Result<DtStateSpace, LinsysError> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(LinsysError::InvalidSampleTime(ts));
    }
    let n = ct.a.nrows();
    let m = ct.b.ncols();
    let mut blk = Mat::zeros(n + m, n + m);
    blk.view_mut((0, 0), (n, n)).copy_from(&(&ct.a * ts));
    blk.view_mut((0, n), (n, m)).copy_from(&(&ct.b * ts));
    let e = expm(&blk);
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, m)).into_owned();
    let dt = DtStateSpace::new(ad, bd, ct.c.clone(), ct.d.clone(), ts)?;
    if !dt.is_finite() {
        return Err(LinsysError::NonFinite("discretized model"));
    }
    Ok(dt)
}

/// Realization of `g ↦ [u; y] = [K (I − M_y); M_y] g`.
///
/// The state is `[x_K; x_M]`; internally `y = M_y g`, `e = g − y`, `u = K e`.
pub fn augment(k: &DtStateSpace, my: &DtStateSpace) -> Result<DtStateSpace, LinsysError> {
    if (k.sample_time - my.sample_time).abs() > 1e-12 * k.sample_time.max(my.sample_time) {
        return Err(LinsysError::SampleTime(k.sample_time, my.sample_time));
    }
    let ng = my.n_inputs();
    if my.n_outputs() != ng {
        return Err(LinsysError::Dimension(format!(
            "M_y must be square to form I - M_y, got {}x{}",
            my.n_outputs(),
            ng
        )));
    }
    if k.n_inputs() != my.n_outputs() {
        return Err(LinsysError::Dimension(format!(
            "K takes {} inputs but M_y has {} outputs",
            k.n_inputs(),
            my.n_outputs()
        )));
    }
    let nk = k.n_states();
    let nm = my.n_states();
    let nu = k.n_outputs();
    let i_minus_d = Mat::identity(ng, ng) - &my.d;

    let mut a = Mat::zeros(nk + nm, nk + nm);
    a.view_mut((0, 0), (nk, nk)).copy_from(&k.a);
    a.view_mut((0, nk), (nk, nm)).copy_from(&(-&k.b * &my.c));
    a.view_mut((nk, nk), (nm, nm)).copy_from(&my.a);

    let mut b = Mat::zeros(nk + nm, ng);
    b.view_mut((0, 0), (nk, ng)).copy_from(&(&k.b * &i_minus_d));
    b.view_mut((nk, 0), (nm, ng)).copy_from(&my.b);

    let mut c = Mat::zeros(nu + ng, nk + nm);
    c.view_mut((0, 0), (nu, nk)).copy_from(&k.c);
    c.view_mut((0, nk), (nu, nm)).copy_from(&(-&k.d * &my.c));
    c.view_mut((nu, nk), (ng, nm)).copy_from(&my.c);

    let mut d = Mat::zeros(nu + ng, ng);
    d.view_mut((0, 0), (nu, ng)).copy_from(&(&k.d * &i_minus_d));
    d.view_mut((nu, 0), (ng, ng)).copy_from(&my.d);

    DtStateSpace::new(a, b, c, d, k.sample_time)
}

/// Slow-rate model of `m` with its input held over `n` fast samples and its
/// output sampled at the start of each slow period.
pub fn lift(m: &DtStateSpace, n: usize) -> Result<DtStateSpace, LinsysError> {
    if n == 0 {
        return Err(LinsysError::Dimension("lifting factor must be >= 1".into()));
    }
    let nx = m.n_states();
    let mut a_pow = Mat::identity(nx, nx);
    let mut b_sum = Mat::zeros(nx, m.n_inputs());
    for _ in 0..n {
        b_sum += &a_pow * &m.b;
        a_pow = &m.a * &a_pow;
    }
    let lifted = DtStateSpace::new(a_pow, b_sum, m.c.clone(), m.d.clone(), m.sample_time * n as f64)?;
    if !lifted.is_finite() {
        return Err(LinsysError::NonFinite("lifted model"));
    }
    Ok(lifted)
}

/// Stability margin inside the unit circle.
pub const SCHUR_MARGIN: f64 = 1e-9;

/// Spectral radius of a square matrix; `None` if the eigensolver fails.
pub fn spectral_radius(a: &Mat) -> Option<f64> {
    if a.nrows() == 0 {
        return Some(0.0);
    }
    if !a.iter().all(|v| v.is_finite()) {
        return None;
    }
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 10_000)?;
    let eigs = schur.complex_eigenvalues();
    Some(eigs.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// `true` iff every eigenvalue of `A` has modulus below `1 − 1e-9`.
/// Eigensolver failure counts as unstable.
pub fn is_schur_stable(m: &DtStateSpace) -> bool {
    matches!(spectral_radius(&m.a), Some(r) if r < 1.0 - SCHUR_MARGIN)
}

/// Iterate the model from `x0`, returning one output per input sample.
pub fn simulate_lti(m: &DtStateSpace, x0: &Vector, inputs: &[Vector]) -> Vec<Vector> {
    let mut x = x0.clone();
    inputs
        .iter()
        .map(|u| {
            let (y, xn) = m.step(&x, u);
            x = xn;
            y
        })
        .collect()
}
