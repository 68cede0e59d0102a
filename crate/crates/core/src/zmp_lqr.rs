//! COM/ZMP linear model and its LQR value functions.
//!
//! State `x = [x_com, y_com, ẋ_com, ẏ_com]`, input `u = [ẍ_com, ÿ_com]`,
//! output `y = C x + D(t) u` (the ZMP) with `D(t) = -(z_com / (z̈_com + g)) I`.
//! With that sign the constant-height case is the classical
//! `x_zmp = x_com - (z_com / g) ẍ_com`.
//!
//! Value functions are `J*(x̄, t) = x̄ᵀ S x̄ + s1ᵀ x̄ + s0` for the output cost
//! `ȳᵀ Qy ȳ`, which in state/input form has `Q = CᵀQyC`, `N = CᵀQyD`,
//! `R = DᵀQyD`. The time-varying case integrates
//!
//! ```text
//! -Ṡ  = Q + SA + AᵀS - (SB + N) R⁻¹ (BᵀS + Nᵀ)
//! -ṡ1 = q + Aᵀs1 - (SB + N) R⁻¹ (r + Bᵀs1)
//! -ṡ0 = c - ¼ (r + Bᵀs1)ᵀ R⁻¹ (r + Bᵀs1)
//! ```
//!
//! backward from `S(t_f) = Qf`, with `q = -2CᵀQy y_d`, `r = -2DᵀQy y_d`,
//! `c = y_dᵀQy y_d`. Positions are measured from the final ZMP target so the
//! boundary terms `s1(t_f)` and `s0(t_f)` vanish.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use thiserror::Error;

pub const DEFAULT_GRAVITY: f64 = 9.81;
/// Default Riccati integration step (s).
pub const DEFAULT_RICCATI_DT: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum LqrError {
    #[error("time {t} outside model domain [{t0}, {t1}]")]
    OutOfDomain { t: f64, t0: f64, t1: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid tracking problem: {0}")]
    InvalidProblem(String),
    #[error("input weight R is singular")]
    SingularInputWeight,
    #[error("Riccati solve failed: {0}")]
    Riccati(String),
    #[error("integration diverged at t = {t}")]
    Integration { t: f64 },
}

/// COM height as a known function of time.
#[derive(Debug, Clone, PartialEq)]
pub enum HeightProfile {
    Constant(f64),
    /// Samples `(t, z, ż, z̈)` interpolated linearly; times strictly increasing.
    Sampled(Vec<[f64; 4]>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComZmpModel {
    pub gravity: f64,
    pub height: HeightProfile,
}

impl ComZmpModel {
    pub fn constant_height(z_com: f64, gravity: f64) -> Result<Self, LqrError> {
        if !(z_com > 0.0) || !(gravity > 0.0) {
            return Err(LqrError::InvalidModel(format!(
                "need z_com > 0 and g > 0 (got {z_com}, {gravity})"
            )));
        }
        Ok(Self {
            gravity,
            height: HeightProfile::Constant(z_com),
        })
    }

    pub fn time_varying(samples: Vec<[f64; 4]>, gravity: f64) -> Result<Self, LqrError> {
        if samples.is_empty() {
            return Err(LqrError::InvalidModel("no height samples".into()));
        }
        if samples.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            return Err(LqrError::InvalidModel("sample times not increasing".into()));
        }
        if let Some(s) = samples.iter().find(|s| !(s[3] + gravity > 0.0) || !(s[1] > 0.0)) {
            return Err(LqrError::InvalidModel(format!(
                "z̈ + g must be positive and z > 0 (sample at t = {})",
                s[0]
            )));
        }
        Ok(Self {
            gravity,
            height: HeightProfile::Sampled(samples),
        })
    }

    pub fn is_constant_height(&self) -> bool {
        matches!(self.height, HeightProfile::Constant(_))
    }

    pub fn domain(&self) -> (f64, f64) {
        match &self.height {
            HeightProfile::Constant(_) => (f64::NEG_INFINITY, f64::INFINITY),
            HeightProfile::Sampled(s) => (s[0][0], s[s.len() - 1][0]),
        }
    }

    /// `(z, ż, z̈)` at `t`.
    pub fn height_at(&self, t: f64) -> Result<[f64; 3], LqrError> {
        match &self.height {
            HeightProfile::Constant(z) => Ok([*z, 0.0, 0.0]),
            HeightProfile::Sampled(s) => {
                let (t0, t1) = self.domain();
                if !(t >= t0 && t <= t1) {
                    return Err(LqrError::OutOfDomain { t, t0, t1 });
                }
                let k = s.partition_point(|p| p[0] <= t).clamp(1, s.len().max(2) - 1);
                if s.len() == 1 {
                    return Ok([s[0][1], s[0][2], s[0][3]]);
                }
                let (a, b) = (&s[k - 1], &s[k]);
                let w = (t - a[0]) / (b[0] - a[0]);
                Ok([
                    a[1] + w * (b[1] - a[1]),
                    a[2] + w * (b[2] - a[2]),
                    a[3] + w * (b[3] - a[3]),
                ])
            }
        }
    }

    pub fn a(&self) -> Matrix4<f64> {
        let mut a = Matrix4::zeros();
        a[(0, 2)] = 1.0;
        a[(1, 3)] = 1.0;
        a
    }

    pub fn b(&self) -> Matrix4x2<f64> {
        let mut b = Matrix4x2::zeros();
        b[(2, 0)] = 1.0;
        b[(3, 1)] = 1.0;
        b
    }

    pub fn c(&self) -> Matrix2x4<f64> {
        let mut c = Matrix2x4::zeros();
        c[(0, 0)] = 1.0;
        c[(1, 1)] = 1.0;
        c
    }

    /// `D(t) = -(z / (z̈ + g)) I`.
    pub fn d(&self, t: f64) -> Result<Matrix2<f64>, LqrError> {
        let [z, _, zdd] = self.height_at(t)?;
        Ok(Matrix2::identity() * (-z / (zdd + self.gravity)))
    }
}

/// ZMP output `y = C x + D(t) u`.
pub fn zmp_output(
    model: &ComZmpModel,
    x: &Vector4<f64>,
    u: &Vector2<f64>,
    t: f64,
) -> Result<Vector2<f64>, LqrError> {
    Ok(model.c() * x + model.d(t)? * u)
}

/// Stabilizing solution of a continuous algebraic Riccati equation with
/// cross weighting
/// `AᵀS + SA - (SB + N) R⁻¹ (BᵀS + Nᵀ) + Q = 0`, `K = R⁻¹ (BᵀS + Nᵀ)`.
#[derive(Debug, Clone)]
pub struct CareSolution {
    pub s: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub residual: f64,
}

pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let rinv = r.clone().try_inverse()?;
    let sbn = s * b + n;
    Some(a.transpose() * s + s * a - &sbn * rinv * sbn.transpose() + q)
}

/// Matrix sign function by scaled Newton iteration.
fn matrix_sign(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = h.nrows();
    let mut z = h.clone();
    for _ in 0..100 {
        let zi = z.clone().try_inverse()?;
        let det = z.determinant().abs();
        let c = if det > 0.0 && det.is_finite() {
            det.powf(-1.0 / n as f64)
        } else {
            1.0
        };
        let next = (&z * c + zi / c) * 0.5;
        let diff = (&next - &z).norm();
        let scale = next.norm();
        z = next;
        if diff <= 1e-13 * scale {
            // finish with unscaled steps
            for _ in 0..2 {
                let zi = z.clone().try_inverse()?;
                z = (&z + zi) * 0.5;
            }
            return Some(z);
        }
    }
    None
}

/// Solves `Aᵀ X + X A + Q = 0` through the Kronecker form.
fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut big = DMatrix::zeros(n * n, n * n);
    // vec(AᵀX) = (I ⊗ Aᵀ) vec X ; vec(XA) = (Aᵀ ⊗ I) vec X  (column-major)
    for j in 0..n {
        for i in 0..n {
            let row = j * n + i;
            for k in 0..n {
                big[(row, j * n + k)] += a[(k, i)];
                big[(row, k * n + i)] += a[(k, j)];
            }
        }
    }
    let rhs = DMatrix::from_column_slice(n * n, 1, (-q).as_slice());
    let x = big.lu().solve(&rhs)?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    Some((&x + x.transpose()) * 0.5)
}

pub fn care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n: &DMatrix<f64>,
) -> Result<CareSolution, LqrError> {
    let ns = a.nrows();
    let rinv = r
        .clone()
        .try_inverse()
        .ok_or(LqrError::SingularInputWeight)?;
    let abar = a - b * &rinv * n.transpose();
    let qbar = q - n * &rinv * n.transpose();
    let g = b * &rinv * b.transpose();

    let mut ham = DMatrix::zeros(2 * ns, 2 * ns);
    ham.view_mut((0, 0), (ns, ns)).copy_from(&abar);
    ham.view_mut((0, ns), (ns, ns)).copy_from(&(-&g));
    ham.view_mut((ns, 0), (ns, ns)).copy_from(&(-&qbar));
    ham.view_mut((ns, ns), (ns, ns)).copy_from(&(-abar.transpose()));

    let w = matrix_sign(&ham).ok_or_else(|| LqrError::Riccati("sign iteration failed".into()))?;
    let id = DMatrix::<f64>::identity(ns, ns);
    let mut lhs = DMatrix::zeros(2 * ns, ns);
    lhs.view_mut((0, 0), (ns, ns)).copy_from(&w.view((0, ns), (ns, ns)));
    lhs.view_mut((ns, 0), (ns, ns))
        .copy_from(&(w.view((ns, ns), (ns, ns)) + &id));
    let mut rhs = DMatrix::zeros(2 * ns, ns);
    rhs.view_mut((0, 0), (ns, ns))
        .copy_from(&(-(w.view((0, 0), (ns, ns)) + &id)));
    rhs.view_mut((ns, 0), (ns, ns))
        .copy_from(&(-w.view((ns, 0), (ns, ns))));
    let mut s = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| LqrError::Riccati(e.to_string()))?;
    s = (&s + s.transpose()) * 0.5;

    // Newton-Kleinman polish
    let scale = 1.0 + q.amax() + s.amax();
    for _ in 0..6 {
        let res = care_residual(a, b, q, r, n, &s).ok_or(LqrError::SingularInputWeight)?;
        if res.amax() <= 1e-14 * scale {
            break;
        }
        let k = &rinv * (b.transpose() * &s + n.transpose());
        let ak = a - b * &k;
        let qk = q - n * &k - k.transpose() * n.transpose() + k.transpose() * r * &k;
        match lyapunov(&ak, &qk) {
            Some(next) => s = next,
            None => break,
        }
    }
    let k = &rinv * (b.transpose() * &s + n.transpose());
    let residual = care_residual(a, b, q, r, n, &s)
        .ok_or(LqrError::SingularInputWeight)?
        .amax();
    let closed = a - b * &k;
    let max_re = closed
        .complex_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |m, e| m.max(e.re));
    if !(max_re < 0.0) {
        return Err(LqrError::Riccati(format!(
            "closed loop not Hurwitz (max Re λ = {max_re:e})"
        )));
    }
    Ok(CareSolution { s, k, residual })
}

fn to_dm<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

/// State-space weights induced by the output cost at time `t`.
fn output_weights(
    model: &ComZmpModel,
    qy: &Matrix2<f64>,
    t: f64,
) -> Result<(Matrix4<f64>, Matrix4x2<f64>, Matrix2<f64>, Matrix2<f64>), LqrError> {
    let c = model.c();
    let d = model.d(t)?;
    let q = c.transpose() * qy * c;
    let n = c.transpose() * qy * d;
    let r = d.transpose() * qy * d;
    Ok((q, n, r, d))
}

#[derive(Debug, Clone)]
pub struct BalanceDesign {
    pub s: Matrix4<f64>,
    pub k: Matrix2x4<f64>,
    pub residual: f64,
}

/// Infinite-horizon ZMP regulator for constant COM height.
pub fn lqr_balance(model: &ComZmpModel, qy: &Matrix2<f64>) -> Result<BalanceDesign, LqrError> {
    if !model.is_constant_height() {
        return Err(LqrError::InvalidModel(
            "balance design needs a constant COM height".into(),
        ));
    }
    let (q, n, r, _) = output_weights(model, qy, 0.0)?;
    let sol = care(&to_dm(&model.a()), &to_dm(&model.b()), &to_dm(&q), &to_dm(&r), &to_dm(&n))?;
    Ok(BalanceDesign {
        s: Matrix4::from_column_slice(sol.s.as_slice()),
        k: Matrix2x4::from_column_slice(sol.k.as_slice()),
        residual: sol.residual,
    })
}

/// Piecewise-linear 2-D trajectory, clamped outside its knots.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    knots: Vec<(f64, Vector2<f64>)>,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<(f64, Vector2<f64>)>) -> Result<Self, LqrError> {
        if knots.is_empty() {
            return Err(LqrError::InvalidProblem("empty ZMP plan".into()));
        }
        if knots.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(LqrError::InvalidProblem("knot times decrease".into()));
        }
        Ok(Self { knots })
    }

    pub fn constant(p: Vector2<f64>) -> Self {
        Self {
            knots: vec![(0.0, p)],
        }
    }

    pub fn knots(&self) -> &[(f64, Vector2<f64>)] {
        &self.knots
    }

    pub fn eval(&self, t: f64) -> Vector2<f64> {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        let last = k[k.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let i = k.partition_point(|p| p.0 <= t);
        let (a, b) = (k[i - 1], k[i]);
        if b.0 == a.0 {
            return b.1;
        }
        let w = (t - a.0) / (b.0 - a.0);
        a.1 + (b.1 - a.1) * w
    }
}

#[derive(Debug, Clone)]
pub struct TrackingProblem {
    pub qy: Matrix2<f64>,
    pub qf: Matrix4<f64>,
    pub y_des: PiecewiseLinear,
    pub t_final: f64,
}

impl TrackingProblem {
    pub fn validate(&self) -> Result<(), LqrError> {
        let qy_det = self.qy.determinant();
        if (self.qy - self.qy.transpose()).amax() > 1e-12 || !(self.qy[(0, 0)] > 0.0) || !(qy_det > 0.0) {
            return Err(LqrError::InvalidProblem("Qy must be SPD".into()));
        }
        if (self.qf - self.qf.transpose()).amax() > 1e-10 * self.qf.amax().max(1.0) {
            return Err(LqrError::InvalidProblem("Qf must be symmetric".into()));
        }
        let min_eig = self.qf.symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-10 * self.qf.amax().max(1.0) {
            return Err(LqrError::InvalidProblem("Qf must be PSD".into()));
        }
        if !(self.t_final > 0.0) {
            return Err(LqrError::InvalidProblem("t_final must be positive".into()));
        }
        Ok(())
    }
}

/// Quadratic value function sampled on a uniform grid, plus the nominal
/// COM trajectory it was simulated along.
#[derive(Debug, Clone)]
pub struct QuadraticValueFunction {
    model: ComZmpModel,
    qy: Matrix2<f64>,
    y_des: PiecewiseLinear,
    /// Position origin of `s1`/`s0` (final ZMP target, zero velocity).
    offset: Vector4<f64>,
    t0: f64,
    dt: f64,
    s: Vec<Matrix4<f64>>,
    s1: Vec<Vector4<f64>>,
    s0: Vec<f64>,
    x_des: Vec<Vector4<f64>>,
    stationary: bool,
}

/// All time-indexed quantities of a value function at one instant.
#[derive(Debug, Clone, Copy)]
pub struct ValueSample {
    pub s: Matrix4<f64>,
    /// Linear term about `x_des` (i.e. `∂J*/∂x̄` at `x̄ = 0`).
    pub s1_nominal: Vector4<f64>,
    pub k: Matrix2x4<f64>,
    pub x_des: Vector4<f64>,
    pub u_des: Vector2<f64>,
    pub y_des: Vector2<f64>,
    pub d: Matrix2<f64>,
}

impl QuadraticValueFunction {
    /// Time-invariant value function of a balance design regulating the ZMP
    /// to `setpoint` (`s1 = s0 = 0` about the shifted origin).
    pub fn balance(
        model: &ComZmpModel,
        qy: &Matrix2<f64>,
        design: &BalanceDesign,
        setpoint: Vector2<f64>,
    ) -> Self {
        let offset = Vector4::new(setpoint[0], setpoint[1], 0.0, 0.0);
        Self {
            model: model.clone(),
            qy: *qy,
            y_des: PiecewiseLinear::constant(setpoint),
            offset,
            t0: 0.0,
            dt: 1.0,
            s: vec![design.s],
            s1: vec![Vector4::zeros()],
            s0: vec![0.0],
            x_des: vec![offset],
            stationary: true,
        }
    }

    pub fn is_stationary(&self) -> bool {
        self.stationary
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.s.len()).map(|k| self.t0 + k as f64 * self.dt).collect()
    }

    pub fn t_final(&self) -> f64 {
        self.t0 + (self.s.len() - 1) as f64 * self.dt
    }

    pub fn offset(&self) -> Vector4<f64> {
        self.offset
    }

    pub fn qy(&self) -> &Matrix2<f64> {
        &self.qy
    }

    pub fn model(&self) -> &ComZmpModel {
        &self.model
    }

    pub fn y_des(&self) -> &PiecewiseLinear {
        &self.y_des
    }

    pub fn s_samples(&self) -> &[Matrix4<f64>] {
        &self.s
    }

    pub fn s1_samples(&self) -> &[Vector4<f64>] {
        &self.s1
    }

    pub fn s0_samples(&self) -> &[f64] {
        &self.s0
    }

    pub fn x_des_samples(&self) -> &[Vector4<f64>] {
        &self.x_des
    }

    fn locate(&self, t: f64) -> (usize, usize, f64) {
        if self.stationary || self.s.len() == 1 {
            return (0, 0, 0.0);
        }
        let last = self.s.len() - 1;
        let u = ((t - self.t0) / self.dt).clamp(0.0, last as f64);
        let i = (u.floor() as usize).min(last - 1);
        (i, i + 1, u - i as f64)
    }

    /// `S(t)`, linearly interpolated; clamped outside the grid.
    pub fn s_at(&self, t: f64) -> Matrix4<f64> {
        let (i, j, w) = self.locate(t);
        self.s[i] * (1.0 - w) + self.s[j] * w
    }

    /// `s1(t)` about the offset origin.
    pub fn s1_at(&self, t: f64) -> Vector4<f64> {
        let (i, j, w) = self.locate(t);
        self.s1[i] * (1.0 - w) + self.s1[j] * w
    }

    pub fn s0_at(&self, t: f64) -> f64 {
        let (i, j, w) = self.locate(t);
        self.s0[i] * (1.0 - w) + self.s0[j] * w
    }

    pub fn x_des_at(&self, t: f64) -> Vector4<f64> {
        let (i, j, w) = self.locate(t);
        self.x_des[i] * (1.0 - w) + self.x_des[j] * w
    }

    fn clamp_t(&self, t: f64) -> f64 {
        if self.stationary {
            t
        } else {
            t.clamp(self.t0, self.t_final())
        }
    }

    /// Gain and feedforward `(K, k)` of the optimal policy
    /// `u* = -K (x - offset) + k` at `t`.
    pub fn policy_at(&self, t: f64) -> Result<(Matrix2x4<f64>, Vector2<f64>), LqrError> {
        let tc = self.clamp_t(t);
        let (_, n, r, d) = output_weights(&self.model, &self.qy, tc)?;
        let rinv = r.try_inverse().ok_or(LqrError::SingularInputWeight)?;
        let s = self.s_at(tc);
        let s1 = self.s1_at(tc);
        let k = rinv * (self.model.b().transpose() * s + n.transpose());
        let yd = self.y_des.eval(tc) - Vector2::new(self.offset[0], self.offset[1]);
        let r_lin = -2.0 * d.transpose() * self.qy * yd;
        let kff = -0.5 * rinv * (r_lin + self.model.b().transpose() * s1);
        Ok((k, kff))
    }

    pub fn gain_at(&self, t: f64) -> Result<Matrix2x4<f64>, LqrError> {
        Ok(self.policy_at(t)?.0)
    }

    /// Optimal policy evaluated at state `x`.
    pub fn optimal_input(&self, t: f64, x: &Vector4<f64>) -> Result<Vector2<f64>, LqrError> {
        let (k, kff) = self.policy_at(t)?;
        Ok(-k * (x - self.offset) + kff)
    }

    pub fn sample(&self, t: f64) -> Result<ValueSample, LqrError> {
        let tc = self.clamp_t(t);
        let s = self.s_at(tc);
        let x_des = self.x_des_at(tc);
        let u_des = self.optimal_input(tc, &x_des)?;
        let (k, _) = self.policy_at(tc)?;
        Ok(ValueSample {
            s,
            s1_nominal: 2.0 * s * (x_des - self.offset) + self.s1_at(tc),
            k,
            x_des,
            u_des,
            y_des: self.y_des.eval(tc),
            d: self.model.d(tc)?,
        })
    }

    /// `J*(x, t)` for an absolute state `x`.
    pub fn cost_to_go(&self, t: f64, x: &Vector4<f64>) -> f64 {
        let xs = x - self.offset;
        (xs.transpose() * self.s_at(t) * xs)[0] + self.s1_at(t).dot(&xs) + self.s0_at(t)
    }

    /// Replaces the nominal trajectory (must match the grid length).
    pub fn set_nominal(&mut self, x_des: Vec<Vector4<f64>>) -> Result<(), LqrError> {
        if x_des.len() != self.s.len() {
            return Err(LqrError::InvalidProblem(format!(
                "nominal has {} samples, grid has {}",
                x_des.len(),
                self.s.len()
            )));
        }
        self.x_des = x_des;
        Ok(())
    }

    /// CSV with one row per grid sample:
    /// `t, S00..S33 (row-major), s1_0..s1_3, s0, K00..K13 (row-major)`.
    pub fn to_csv(&self) -> Result<String, LqrError> {
        let mut out = String::from("t");
        for i in 0..4 {
            for j in 0..4 {
                let _ = write!(out, ",S{i}{j}");
            }
        }
        out.push_str(",s1_0,s1_1,s1_2,s1_3,s0");
        for i in 0..2 {
            for j in 0..4 {
                let _ = write!(out, ",K{i}{j}");
            }
        }
        out.push('\n');
        for (k, t) in self.times().into_iter().enumerate() {
            let kt = self.gain_at(t)?;
            let _ = write!(out, "{t}");
            for i in 0..4 {
                for j in 0..4 {
                    let _ = write!(out, ",{}", self.s[k][(i, j)]);
                }
            }
            for i in 0..4 {
                let _ = write!(out, ",{}", self.s1[k][i]);
            }
            let _ = write!(out, ",{}", self.s0[k]);
            for i in 0..2 {
                for j in 0..4 {
                    let _ = write!(out, ",{}", kt[(i, j)]);
                }
            }
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Clone, Copy)]
struct RiccatiState {
    s: Matrix4<f64>,
    s1: Vector4<f64>,
    s0: f64,
}

impl RiccatiState {
    fn axpy(&self, h: f64, d: &RiccatiState) -> RiccatiState {
        RiccatiState {
            s: self.s + d.s * h,
            s1: self.s1 + d.s1 * h,
            s0: self.s0 + d.s0 * h,
        }
    }
}

/// Time derivative `(Ṡ, ṡ1, ṡ0)`.
fn riccati_rhs(
    model: &ComZmpModel,
    qy: &Matrix2<f64>,
    y_des: &PiecewiseLinear,
    origin: &Vector2<f64>,
    t: f64,
    x: &RiccatiState,
) -> Result<RiccatiState, LqrError> {
    let (a, b, c) = (model.a(), model.b(), model.c());
    let (q, n, r, d) = output_weights(model, qy, t)?;
    let rinv = r.try_inverse().ok_or(LqrError::SingularInputWeight)?;
    let yd = y_des.eval(t) - origin;
    let q_lin = -2.0 * c.transpose() * qy * yd;
    let r_lin = -2.0 * d.transpose() * qy * yd;
    let c0 = (yd.transpose() * qy * yd)[0];
    let sbn = x.s * b + n;
    let v = r_lin + b.transpose() * x.s1;
    let ds = -(q + x.s * a + a.transpose() * x.s - sbn * rinv * sbn.transpose());
    let ds1 = -(q_lin + a.transpose() * x.s1 - sbn * rinv * v);
    let ds0 = -(c0 - 0.25 * (v.transpose() * rinv * v)[0]);
    Ok(RiccatiState {
        s: ds,
        s1: ds1,
        s0: ds0,
    })
}

/// Time-varying LQR for ZMP tracking by fixed-step RK4 backward in time.
/// The nominal trajectory is left at the origin; attach one with
/// [`nominal_com_traj`] and [`QuadraticValueFunction::set_nominal`].
pub fn tvlqr(
    model: &ComZmpModel,
    prob: &TrackingProblem,
    dt: f64,
) -> Result<QuadraticValueFunction, LqrError> {
    prob.validate()?;
    if !(dt > 0.0) {
        return Err(LqrError::InvalidProblem("dt must be positive".into()));
    }
    let (d0, d1) = model.domain();
    if d0 > 0.0 || d1 < prob.t_final {
        return Err(LqrError::OutOfDomain {
            t: prob.t_final,
            t0: d0,
            t1: d1,
        });
    }
    let steps = (prob.t_final / dt).round().max(1.0) as usize;
    let h = prob.t_final / steps as f64;
    let origin = prob.y_des.eval(prob.t_final);
    let offset = Vector4::new(origin[0], origin[1], 0.0, 0.0);

    let mut states = vec![
        RiccatiState {
            s: Matrix4::zeros(),
            s1: Vector4::zeros(),
            s0: 0.0,
        };
        steps + 1
    ];
    states[steps] = RiccatiState {
        s: prob.qf,
        s1: Vector4::zeros(),
        s0: 0.0,
    };
    let f = |t: f64, x: &RiccatiState| riccati_rhs(model, &prob.qy, &prob.y_des, &origin, t, x);
    for k in (0..steps).rev() {
        let t = (k + 1) as f64 * h;
        let x = states[k + 1];
        // integrate with step -h
        let k1 = f(t, &x)?;
        let k2 = f(t - 0.5 * h, &x.axpy(-0.5 * h, &k1))?;
        let k3 = f(t - 0.5 * h, &x.axpy(-0.5 * h, &k2))?;
        let k4 = f(t - h, &x.axpy(-h, &k3))?;
        let mut next = RiccatiState {
            s: x.s - (k1.s + k2.s * 2.0 + k3.s * 2.0 + k4.s) * (h / 6.0),
            s1: x.s1 - (k1.s1 + k2.s1 * 2.0 + k3.s1 * 2.0 + k4.s1) * (h / 6.0),
            s0: x.s0 - (k1.s0 + 2.0 * k2.s0 + 2.0 * k3.s0 + k4.s0) * (h / 6.0),
        };
        next.s = (next.s + next.s.transpose()) * 0.5;
        if !next.s.iter().all(|v| v.is_finite()) || !next.s0.is_finite() {
            return Err(LqrError::Integration { t: t - h });
        }
        states[k] = next;
    }
    // exact boundary
    states[steps].s = prob.qf;

    Ok(QuadraticValueFunction {
        model: model.clone(),
        qy: prob.qy,
        y_des: prob.y_des.clone(),
        offset,
        t0: 0.0,
        dt: h,
        s: states.iter().map(|x| x.s).collect(),
        s1: states.iter().map(|x| x.s1).collect(),
        s0: states.iter().map(|x| x.s0).collect(),
        x_des: vec![offset; steps + 1],
        stationary: false,
    })
}

/// Closed-loop simulation of the COM model under the value function's
/// optimal policy from `x0`, sampled on the value-function grid (RK4).
pub fn nominal_com_traj(
    vf: &QuadraticValueFunction,
    model: &ComZmpModel,
    x0: &Vector4<f64>,
) -> Result<Vec<Vector4<f64>>, LqrError> {
    let (a, b) = (model.a(), model.b());
    let times = vf.times();
    let f = |t: f64, x: &Vector4<f64>| -> Result<Vector4<f64>, LqrError> {
        Ok(a * x + b * vf.optimal_input(t, x)?)
    };
    let mut out = Vec::with_capacity(times.len());
    let mut x = *x0;
    out.push(x);
    for w in times.windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        let k1 = f(t, &x)?;
        let k2 = f(t + 0.5 * h, &(x + k1 * (0.5 * h)))?;
        let k3 = f(t + 0.5 * h, &(x + k2 * (0.5 * h)))?;
        let k4 = f(t + h, &(x + k3 * h))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(LqrError::Integration { t: t + h });
        }
        out.push(x);
    }
    Ok(out)
}

/// Coefficients of `V(ū) = ūᵀ H_uu ū + h_uᵀ ū + h_0` at a fixed `(t, x̄)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateCoeffs {
    pub h_uu: Matrix2<f64>,
    pub h_u: Vector2<f64>,
    pub h_0: f64,
    /// Nominal input `u_des(t)`; `ū = u - u_des`.
    pub u_des: Vector2<f64>,
    /// Factors of `H_uu = DᵀQyD`.
    pub d: Matrix2<f64>,
    pub qy: Matrix2<f64>,
}

impl SurrogateCoeffs {
    pub fn eval(&self, ubar: &Vector2<f64>) -> f64 {
        (ubar.transpose() * self.h_uu * ubar)[0] + self.h_u.dot(ubar) + self.h_0
    }

    /// Unconstrained minimizer `-½ H_uu⁻¹ h_u`.
    pub fn minimizer(&self) -> Option<Vector2<f64>> {
        Some(-0.5 * self.h_uu.try_inverse()? * self.h_u)
    }
}

/// The surrogate `V(x̄, ū, t) = ȳᵀ Qy ȳ + (∂J*/∂x̄) x̄̇` expanded as a
/// quadratic in `ū`, with `ȳ = C x̄ + D ū + (C x_des + D u_des - y_des)` and
/// `x̄̇ = A x̄ + B ū`.
pub fn surrogate_value(
    vf: &QuadraticValueFunction,
    t: f64,
    xbar: &Vector4<f64>,
) -> Result<SurrogateCoeffs, LqrError> {
    let model = vf.model();
    let smp = vf.sample(t)?;
    let (a, b, c) = (model.a(), model.b(), model.c());
    let qy = vf.qy();
    let e = c * smp.x_des + smp.d * smp.u_des - smp.y_des;
    let y0 = c * xbar + e;
    let grad = 2.0 * smp.s * xbar + smp.s1_nominal;
    Ok(SurrogateCoeffs {
        h_uu: smp.d.transpose() * qy * smp.d,
        h_u: 2.0 * smp.d.transpose() * qy * y0 + b.transpose() * grad,
        h_0: (y0.transpose() * qy * y0)[0] + grad.dot(&(a * xbar)),
        u_des: smp.u_des,
        d: smp.d,
        qy: *qy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn balance_model() -> ComZmpModel {
        ComZmpModel::constant_height(1.0, 9.81).unwrap()
    }

    #[test]
    fn zmp_output_origin_and_classical() {
        let m = ComZmpModel::constant_height(1.0, 10.0).unwrap();
        let y = zmp_output(&m, &Vector4::zeros(), &Vector2::zeros(), 0.0).unwrap();
        assert_eq!(y, Vector2::zeros());
        let y = zmp_output(
            &m,
            &Vector4::new(0.3, 0.0, 0.0, 0.0),
            &Vector2::new(1.0, 0.0),
            0.0,
        )
        .unwrap();
        assert!((y - Vector2::new(0.2, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn zmp_output_time_varying_height() {
        let m = ComZmpModel::time_varying(
            vec![[0.0, 0.9, 0.0, 0.5], [1.0, 1.1, 0.0, -0.5]],
            9.81,
        )
        .unwrap();
        let (x, u, t) = (
            Vector4::new(0.1, -0.2, 0.3, 0.4),
            Vector2::new(0.5, -1.5),
            0.25,
        );
        let y = zmp_output(&m, &x, &u, t).unwrap();
        let (z, zdd) = (0.9 + 0.25 * 0.2, 0.5 - 0.25 * 1.0);
        let f = z / (zdd + 9.81);
        let expected = Vector2::new(x[0] - f * u[0], x[1] - f * u[1]);
        assert!((y - expected).amax() < 1e-15);
        assert!(matches!(
            zmp_output(&m, &x, &u, 2.0),
            Err(LqrError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn model_matrices() {
        let m = balance_model();
        let a = m.a();
        assert_eq!(a[(0, 2)], 1.0);
        assert_eq!(a[(1, 3)], 1.0);
        assert_eq!(a.sum(), 2.0);
        assert_eq!(m.b().sum(), 2.0);
        let d = m.d(3.0).unwrap();
        assert_eq!(d[(0, 1)], 0.0);
        assert_eq!(d[(0, 0)], d[(1, 1)]);
        assert!(ComZmpModel::time_varying(vec![[0.0, 1.0, 0.0, -10.0]], 9.81).is_err());
    }

    #[test]
    fn scalar_care_fixture() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let sol = care(
            &DMatrix::zeros(1, 1),
            &one,
            &one,
            &one,
            &DMatrix::zeros(1, 1),
        )
        .unwrap();
        assert!((sol.s[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((sol.k[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn balance_care_residual_and_stability() {
        let d = lqr_balance(&balance_model(), &Matrix2::identity()).unwrap();
        assert!(d.residual < 1e-8, "{}", d.residual);
        let m = balance_model();
        let cl = m.a() - m.b() * d.k;
        assert!(cl.complex_eigenvalues().iter().all(|e| e.re < 0.0));
        assert!((d.s - d.s.transpose()).amax() < 1e-14);
    }

    #[test]
    fn balance_requires_constant_height() {
        let m = ComZmpModel::time_varying(vec![[0.0, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0]], 9.81)
            .unwrap();
        assert!(lqr_balance(&m, &Matrix2::identity()).is_err());
    }

    #[test]
    fn stationary_tvlqr_stays_at_fixed_point() {
        let m = balance_model();
        let qy = Matrix2::identity();
        let d = lqr_balance(&m, &qy).unwrap();
        let prob = TrackingProblem {
            qy,
            qf: d.s,
            y_des: PiecewiseLinear::constant(Vector2::zeros()),
            t_final: 2.0,
        };
        let vf = tvlqr(&m, &prob, 1e-3).unwrap();
        for s in vf.s_samples() {
            assert!((s - d.s).amax() < 1e-6);
        }
        assert_eq!(*vf.s_samples().last().unwrap(), d.s);
    }

    #[test]
    fn surrogate_on_nominal_has_zero_gradient() {
        let m = balance_model();
        let qy = Matrix2::identity();
        let d = lqr_balance(&m, &qy).unwrap();
        let vf = QuadraticValueFunction::balance(&m, &qy, &d, Vector2::new(0.05, 0.0));
        let c = surrogate_value(&vf, 0.3, &Vector4::zeros()).unwrap();
        assert_eq!(c.h_u, Vector2::zeros());
        assert_eq!(c.minimizer().unwrap(), Vector2::zeros());
    }

    #[test]
    fn surrogate_coefficients_match_direct_evaluation() {
        let m = balance_model();
        let qy = Matrix2::new(1.0, 0.2, 0.2, 2.0);
        let d = lqr_balance(&m, &qy).unwrap();
        let vf = QuadraticValueFunction::balance(&m, &qy, &d, Vector2::new(0.1, -0.1));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let xbar = Vector4::from_fn(|_, _| rng.random_range(-0.2..0.2));
            let ubar = Vector2::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let c = surrogate_value(&vf, 0.0, &xbar).unwrap();
            let ybar = m.c() * xbar + m.d(0.0).unwrap() * ubar;
            let direct = (ybar.transpose() * qy * ybar)[0]
                + (2.0 * d.s * xbar).dot(&(m.a() * xbar + m.b() * ubar));
            assert!((c.eval(&ubar) - direct).abs() <= 1e-12 * direct.abs().max(1.0));
            let umin = c.minimizer().unwrap();
            assert!((umin + d.k * xbar).amax() < 1e-9 * (1.0 + (d.k * xbar).amax()));
        }
    }

    #[test]
    fn nominal_equilibrium_and_setpoint_shift() {
        let m = balance_model();
        let qy = Matrix2::identity();
        let d = lqr_balance(&m, &qy).unwrap();
        let prob = TrackingProblem {
            qy,
            qf: d.s,
            y_des: PiecewiseLinear::constant(Vector2::zeros()),
            t_final: 1.0,
        };
        let vf = tvlqr(&m, &prob, 1e-3).unwrap();
        let traj = nominal_com_traj(&vf, &m, &Vector4::zeros()).unwrap();
        assert!(traj.iter().all(|x| x.amax() < 1e-12));

        let k = Vector2::new(0.07, -0.03);
        let prob = TrackingProblem {
            y_des: PiecewiseLinear::constant(k),
            t_final: 6.0,
            ..prob
        };
        let vf = tvlqr(&m, &prob, 1e-3).unwrap();
        let traj = nominal_com_traj(&vf, &m, &Vector4::zeros()).unwrap();
        let end = traj.last().unwrap();
        assert!((end[0] - k[0]).abs() < 1e-6 && (end[1] - k[1]).abs() < 1e-6);
    }

    #[test]
    fn csv_header_and_rows() {
        let m = balance_model();
        let qy = Matrix2::identity();
        let d = lqr_balance(&m, &qy).unwrap();
        let prob = TrackingProblem {
            qy,
            qf: d.s,
            y_des: PiecewiseLinear::constant(Vector2::zeros()),
            t_final: 0.01,
        };
        let vf = tvlqr(&m, &prob, 1e-3).unwrap();
        let csv = vf.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 12);
        assert_eq!(lines[0].split(',').count(), 1 + 16 + 4 + 1 + 8);
        assert!(lines[0].starts_with("t,S00,S01"));
        assert!(lines[0].ends_with("K12,K13"));
    }

    #[test]
    fn invalid_problems_rejected() {
        let prob = TrackingProblem {
            qy: Matrix2::new(1.0, 0.0, 0.0, -1.0),
            qf: Matrix4::identity(),
            y_des: PiecewiseLinear::constant(Vector2::zeros()),
            t_final: 1.0,
        };
        assert!(prob.validate().is_err());
        assert!(PiecewiseLinear::new(vec![]).is_err());
    }
}
