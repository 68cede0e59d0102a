//! Whole-body QP assembly.
//!
//! Decision vector `z = [q̈ | β | η]` (plus `λ` before `η` in explicit-force
//! mode). The cost
//!
//! ```text
//! V(ū) + w‖q̈_des − q̈‖² + ε Σβ² + ‖η‖²
//! ```
//!
//! is multiplied by two on assembly to fit the solver's `½ zᵀWz + gᵀz`
//! form; the minimizer is unchanged. With `ū = J_com q̈ + J̇_com q̇ − u_des`
//! the `q̈` block becomes `2w I + Uᵀ(2Qy)U` with `U = D(t) J_com`.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qp_types::{ActiveSet, CostStructure, StandardQP};
use crate::zmp_lqr::SurrogateCoeffs;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("input map is singular")]
    SingularInputMap,
}

/// `n_d` unit tangents evenly spaced in the ground plane, starting at `+x`.
/// They sum to zero for every `n_d ≥ 2`.
pub fn even_tangents(n_d: usize) -> Vec<Vector3<f64>> {
    (0..n_d)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n_d as f64;
            let (s, c) = a.sin_cos();
            // snap the exact axes so ±x, ±y come out clean
            let snap = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
            Vector3::new(snap(c), snap(s), 0.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactPoint {
    /// Stable contact identifier (survives contact switches).
    pub id: usize,
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub tangents: Vec<Vector3<f64>>,
    pub mu: f64,
    /// 3×nq point-acceleration Jacobian.
    pub jacobian: DMatrix<f64>,
    pub jdot_qdot: Vector3<f64>,
}

impl ContactPoint {
    pub fn validate(&self) -> Result<(), AssemblyError> {
        if (self.normal.norm() - 1.0).abs() > 1e-12 {
            return Err(AssemblyError::Params(format!("contact {}: normal not unit", self.id)));
        }
        if self.tangents.len() < 3 {
            return Err(AssemblyError::Params(format!(
                "contact {}: need at least 3 tangents",
                self.id
            )));
        }
        if self
            .tangents
            .iter()
            .any(|d| d.dot(&self.normal).abs() > 1e-12 || (d.norm() - 1.0).abs() > 1e-12)
        {
            return Err(AssemblyError::Params(format!(
                "contact {}: tangents must be unit and orthogonal to n",
                self.id
            )));
        }
        if !(self.mu >= 0.0) {
            return Err(AssemblyError::Params(format!("contact {}: mu < 0", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LimitFlag {
    Free,
    AtMin,
    AtMax,
}

#[derive(Debug, Clone)]
pub struct DynamicsSnapshot {
    pub nq: usize,
    pub nf: usize,
    pub h: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub b_input: DMatrix<f64>,
    pub contacts: Vec<ContactPoint>,
    /// 2×nq Jacobian of the horizontal COM position.
    pub j_com: DMatrix<f64>,
    pub jdot_qdot_com: Vector2<f64>,
    pub com_height: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    /// One per actuated joint.
    pub limit_flags: Vec<LimitFlag>,
}

impl DynamicsSnapshot {
    pub fn na(&self) -> usize {
        self.nq - self.nf
    }

    pub fn validate(&self) -> Result<(), AssemblyError> {
        let nq = self.nq;
        let dim = |what: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(AssemblyError::Dimension(what.to_string()))
            }
        };
        dim("H", self.h.shape() == (nq, nq))?;
        dim("bias", self.bias.len() == nq)?;
        dim("B_input", self.b_input.shape() == (self.na(), self.na()))?;
        dim("J_com", self.j_com.shape() == (2, nq))?;
        dim("q", self.q.len() == nq && self.qdot.len() == nq)?;
        dim("limit flags", self.limit_flags.len() == self.na())?;
        for c in &self.contacts {
            dim("contact Jacobian", c.jacobian.shape() == (3, nq))?;
            c.validate()?;
        }
        Ok(())
    }

    /// Stacked `Φ` (3·N_c × nq).
    pub fn contact_jacobian(&self) -> DMatrix<f64> {
        let mut phi = DMatrix::zeros(3 * self.contacts.len(), self.nq);
        for (k, c) in self.contacts.iter().enumerate() {
            phi.rows_mut(3 * k, 3).copy_from(&c.jacobian);
        }
        phi
    }

    pub fn contact_jdot_qdot(&self) -> DVector<f64> {
        let mut v = DVector::zeros(3 * self.contacts.len());
        for (k, c) in self.contacts.iter().enumerate() {
            v.rows_mut(3 * k, 3).copy_from(&c.jdot_qdot);
        }
        v
    }

    /// `Φᵀλ` for per-contact forces in snapshot order.
    pub fn generalized_force(&self, forces: &[Vector3<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.nq);
        for (c, f) in self.contacts.iter().zip(forces) {
            out += c.jacobian.transpose() * f;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrictionParam {
    #[default]
    GeneratingVectors,
    StewartTrinkle,
}

impl fmt::Display for FrictionParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GeneratingVectors => "generating-vectors",
            Self::StewartTrinkle => "stewart-trinkle",
        })
    }
}

/// Whether contact forces are substituted out or kept as variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForceMode {
    #[default]
    Eliminated,
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    pub w_qdd: f64,
    pub eps_beta: f64,
    pub noslip_alpha: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    pub tau_min: DVector<f64>,
    pub tau_max: DVector<f64>,
    pub n_d: usize,
    pub friction: FrictionParam,
    pub kp: f64,
    pub kd: f64,
    pub force_mode: ForceMode,
    /// Weight of `‖λ − Gβ‖²` in explicit mode; zero on the feasible set,
    /// it only keeps `W` positive definite.
    pub explicit_penalty: f64,
}

impl ControllerParams {
    pub fn with_torque_limits(tau_min: DVector<f64>, tau_max: DVector<f64>) -> Self {
        Self {
            w_qdd: 1e-3,
            eps_beta: 1e-8,
            noslip_alpha: 5.0,
            eta_min: -10.0,
            eta_max: 10.0,
            tau_min,
            tau_max,
            n_d: 4,
            friction: FrictionParam::GeneratingVectors,
            kp: 100.0,
            kd: 20.0,
            force_mode: ForceMode::Eliminated,
            explicit_penalty: 1.0,
        }
    }

    pub fn validate(&self, na: usize) -> Result<(), AssemblyError> {
        let bad = |m: &str| Err(AssemblyError::Params(m.to_string()));
        if !(self.w_qdd > 0.0) {
            return bad("w_qdd must be positive");
        }
        if !(self.eps_beta > 0.0) {
            return bad("eps_beta must be positive");
        }
        if !(self.eta_min < 0.0 && 0.0 < self.eta_max) {
            return bad("need eta_min < 0 < eta_max");
        }
        if self.tau_min.len() != na || self.tau_max.len() != na {
            return Err(AssemblyError::Dimension("torque limits".into()));
        }
        if self.tau_min.iter().zip(self.tau_max.iter()).any(|(a, b)| !(a < b)) {
            return bad("need tau_min < tau_max");
        }
        if self.n_d < 3 {
            return bad("n_d must be at least 3");
        }
        if !(self.explicit_penalty > 0.0) {
            return bad("explicit_penalty must be positive");
        }
        Ok(())
    }
}

/// `K̂ = {Σ β_i v_i}` with `v_i = n + μ d_i`.
pub fn friction_generators(c: &ContactPoint) -> Vec<Vector3<f64>> {
    c.tangents.iter().map(|d| c.normal + d * c.mu).collect()
}

/// Linear rows `A [z; β] ≤ b` of the normal-plus-tangent cone:
/// `z ≥ 0`, `β_i ≥ 0`, `Σβ_i − μz ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StewartTrinkleRows {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

pub fn stewart_trinkle_rows(c: &ContactPoint) -> StewartTrinkleRows {
    let nd = c.tangents.len();
    let mut a = DMatrix::zeros(nd + 2, nd + 1);
    for i in 0..=nd {
        a[(i, i)] = -1.0;
    }
    a[(nd + 1, 0)] = -c.mu;
    for i in 0..nd {
        a[(nd + 1, i + 1)] = 1.0;
    }
    StewartTrinkleRows {
        a,
        b: DVector::zeros(nd + 2),
    }
}

/// `λ = z n + Σ β_i d_i`.
pub fn stewart_trinkle_force(c: &ContactPoint, z: f64, beta: &[f64]) -> Vector3<f64> {
    c.tangents
        .iter()
        .zip(beta)
        .fold(c.normal * z, |acc, (d, b)| acc + d * *b)
}

/// Distance-like violation of the linearized cone (0 inside). Both
/// parameterizations describe the same set for evenly spaced tangents.
pub fn cone_violation(c: &ContactPoint, lambda: &Vector3<f64>) -> f64 {
    let fn_ = lambda.dot(&c.normal);
    if c.mu == 0.0 {
        let tang = (lambda - c.normal * fn_).norm();
        return tang.max(-fn_).max(0.0);
    }
    let gens = friction_generators(c);
    let mut worst: f64 = 0.0;
    for i in 0..gens.len() {
        let mut f = gens[i].cross(&gens[(i + 1) % gens.len()]);
        if f.dot(&c.normal) < 0.0 {
            f = -f;
        }
        let f = f.normalize();
        worst = worst.max(-f.dot(lambda));
    }
    worst
}

/// Provenance of one constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RowTag {
    FloatingDynamics { dof: usize },
    NoSlip { contact: usize, axis: usize },
    ContactForce { contact: usize, axis: usize },
    TorqueUpper { joint: usize },
    TorqueLower { joint: usize },
    FrictionNonneg { contact: usize, k: usize },
    NormalNonneg { contact: usize },
    FrictionCap { contact: usize },
    SlackUpper { contact: usize, axis: usize },
    SlackLower { contact: usize, axis: usize },
    JointLimitLower { joint: usize },
    JointLimitUpper { joint: usize },
}

impl RowTag {
    /// Constraint family of the row.
    pub fn family(&self) -> &'static str {
        match self {
            Self::FloatingDynamics { .. } => "dynamics",
            Self::NoSlip { .. } => "accel",
            Self::ContactForce { .. } => "contact-force",
            Self::TorqueUpper { .. } | Self::TorqueLower { .. } => "inputs",
            Self::FrictionNonneg { .. } | Self::NormalNonneg { .. } | Self::FrictionCap { .. } => {
                "friction"
            }
            Self::SlackUpper { .. } | Self::SlackLower { .. } => "slack",
            Self::JointLimitLower { .. } | Self::JointLimitUpper { .. } => "joint-limit",
        }
    }
}

impl fmt::Display for RowTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const AX: [char; 3] = ['x', 'y', 'z'];
        match *self {
            Self::FloatingDynamics { dof } => write!(f, "dynamics dof={dof}"),
            Self::NoSlip { contact, axis } => write!(f, "accel c={contact} {}", AX[axis]),
            Self::ContactForce { contact, axis } => {
                write!(f, "contact-force c={contact} {}", AX[axis])
            }
            Self::TorqueUpper { joint } => write!(f, "inputs joint={joint} upper"),
            Self::TorqueLower { joint } => write!(f, "inputs joint={joint} lower"),
            Self::FrictionNonneg { contact, k } => write!(f, "friction c={contact} beta{k}>=0"),
            Self::NormalNonneg { contact } => write!(f, "friction c={contact} normal>=0"),
            Self::FrictionCap { contact } => write!(f, "friction c={contact} cap"),
            Self::SlackUpper { contact, axis } => write!(f, "slack c={contact} {} upper", AX[axis]),
            Self::SlackLower { contact, axis } => write!(f, "slack c={contact} {} lower", AX[axis]),
            Self::JointLimitLower { joint } => write!(f, "joint-limit joint={joint} qdd>=0"),
            Self::JointLimitUpper { joint } => write!(f, "joint-limit joint={joint} qdd<=0"),
        }
    }
}

/// Force coefficients of one contact inside `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactBlock {
    pub contact: usize,
    pub range: Range<usize>,
    /// 3×k map from coefficients to force.
    pub basis: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct WholeBodyQp {
    pub qp: StandardQP,
    pub nq: usize,
    pub blocks: Vec<ContactBlock>,
    pub lambda: Option<Range<usize>>,
    pub eta: Range<usize>,
    pub eq_tags: Vec<RowTag>,
    pub ineq_tags: Vec<RowTag>,
}

impl WholeBodyQp {
    pub fn n_beta(&self) -> usize {
        self.blocks.iter().map(|b| b.range.len()).sum()
    }

    pub fn qdd(&self, z: &DVector<f64>) -> DVector<f64> {
        z.rows(0, self.nq).into_owned()
    }

    /// Contact forces in snapshot order.
    pub fn forces(&self, z: &DVector<f64>) -> Vec<Vector3<f64>> {
        match &self.lambda {
            Some(r) => (0..self.blocks.len())
                .map(|k| Vector3::new(z[r.start + 3 * k], z[r.start + 3 * k + 1], z[r.start + 3 * k + 2]))
                .collect(),
            None => self
                .blocks
                .iter()
                .map(|b| {
                    let f = &b.basis * z.rows(b.range.start, b.range.len());
                    Vector3::new(f[0], f[1], f[2])
                })
                .collect(),
        }
    }

    pub fn active_tags(&self, act: &ActiveSet) -> Vec<RowTag> {
        act.indices()
            .iter()
            .filter_map(|&i| self.ineq_tags.get(i).copied())
            .collect()
    }

    /// Maps tags from an earlier QP onto this QP's row indices; rows that
    /// no longer exist (e.g. a released contact) are dropped.
    pub fn translate_active_set(&self, tags: &[RowTag]) -> ActiveSet {
        let index: HashMap<RowTag, usize> = self
            .ineq_tags
            .iter()
            .enumerate()
            .map(|(i, t)| (*t, i))
            .collect();
        ActiveSet::from_indices(tags.iter().filter_map(|t| index.get(t).copied()))
    }

    /// One line per row: `eq|ineq <index> <tag>`.
    pub fn provenance_text(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.eq_tags.iter().enumerate() {
            s.push_str(&format!("eq {i} {t}\n"));
        }
        for (i, t) in self.ineq_tags.iter().enumerate() {
            s.push_str(&format!("ineq {i} {t}\n"));
        }
        s
    }
}

fn force_basis(c: &ContactPoint, friction: FrictionParam) -> DMatrix<f64> {
    if c.mu == 0.0 {
        return DMatrix::from_column_slice(3, 1, c.normal.as_slice());
    }
    let cols: Vec<Vector3<f64>> = match friction {
        FrictionParam::GeneratingVectors => friction_generators(c),
        FrictionParam::StewartTrinkle => std::iter::once(c.normal)
            .chain(c.tangents.iter().copied())
            .collect(),
    };
    DMatrix::from_fn(3, cols.len(), |i, j| cols[j][i])
}

struct RowBuilder {
    n: usize,
    rows: Vec<(DVector<f64>, f64, RowTag)>,
}

impl RowBuilder {
    fn new(n: usize) -> Self {
        Self { n, rows: Vec::new() }
    }

    fn push(&mut self, row: DVector<f64>, rhs: f64, tag: RowTag) {
        debug_assert_eq!(row.len(), self.n);
        self.rows.push((row, rhs, tag));
    }

    fn unit(&self, i: usize, v: f64) -> DVector<f64> {
        let mut r = DVector::zeros(self.n);
        r[i] = v;
        r
    }

    fn finish(self) -> (DMatrix<f64>, DVector<f64>, Vec<RowTag>) {
        let m = self.rows.len();
        let mut a = DMatrix::zeros(m, self.n);
        let mut b = DVector::zeros(m);
        let mut tags = Vec::with_capacity(m);
        for (i, (r, v, t)) in self.rows.into_iter().enumerate() {
            a.set_row(i, &r.transpose());
            b[i] = v;
            tags.push(t);
        }
        (a, b, tags)
    }
}

/// Assembles the whole-body QP for one control step.
pub fn build_qp(
    snap: &DynamicsSnapshot,
    vf: &SurrogateCoeffs,
    qdd_des: &DVector<f64>,
    params: &ControllerParams,
) -> Result<WholeBodyQp, AssemblyError> {
    snap.validate()?;
    params.validate(snap.na())?;
    if qdd_des.len() != snap.nq {
        return Err(AssemblyError::Dimension("qdd_des".into()));
    }
    let (nq, nf, na) = (snap.nq, snap.nf, snap.na());
    let nc = snap.contacts.len();
    let binv = snap
        .b_input
        .clone()
        .try_inverse()
        .ok_or(AssemblyError::SingularInputMap)?;

    let mut blocks = Vec::with_capacity(nc);
    let mut off = nq;
    for c in &snap.contacts {
        let basis = force_basis(c, params.friction);
        let k = basis.ncols();
        blocks.push(ContactBlock {
            contact: c.id,
            range: off..off + k,
            basis,
        });
        off += k;
    }
    let n_beta = off - nq;
    let explicit = params.force_mode == ForceMode::Explicit;
    let lambda = explicit.then(|| off..off + 3 * nc);
    if explicit {
        off += 3 * nc;
    }
    let eta = off..off + 3 * nc;
    let n = eta.end;

    // Linear map z ↦ Φᵀλ restricted to the columns that carry force.
    let mut force_map = DMatrix::zeros(nq, n);
    for (k, (c, blk)) in snap.contacts.iter().zip(&blocks).enumerate() {
        let jt = c.jacobian.transpose();
        match &lambda {
            Some(r) => force_map
                .columns_mut(r.start + 3 * k, 3)
                .copy_from(&jt),
            None => force_map
                .columns_mut(blk.range.start, blk.range.len())
                .copy_from(&(&jt * &blk.basis)),
        }
    }

    // Cost.
    let u = DMatrix::from_column_slice(2, 2, vf.d.as_slice()) * &snap.j_com;
    let c_off = snap.jdot_qdot_com - vf.u_des;
    let jt = snap.j_com.transpose();
    let mut g = DVector::zeros(n);
    g.rows_mut(0, nq).copy_from(
        &(qdd_des * (-2.0 * params.w_qdd)
            + &jt * (vf.h_uu * c_off * 2.0)
            + &jt * vf.h_u),
    );
    let mut d22 = DVector::from_element(n - nq, 2.0);
    d22.rows_mut(0, n_beta).fill(2.0 * params.eps_beta);
    if let Some(r) = &lambda {
        d22.rows_mut(r.start - nq, r.len()).fill(0.0);
    }
    let structure = CostStructure {
        split: nq,
        w_qdd: 2.0 * params.w_qdd,
        u,
        qy: vf.qy * 2.0,
        d22,
    };
    let mut w = structure.materialize();
    if let Some(r) = &lambda {
        // ρ‖λ − Gβ‖²
        let rho2 = 2.0 * params.explicit_penalty;
        for (k, blk) in blocks.iter().enumerate() {
            let li = r.start + 3 * k;
            let bk = blk.range.len();
            let gtg = blk.basis.transpose() * &blk.basis * rho2;
            let mut wbb = w.view_mut((blk.range.start, blk.range.start), (bk, bk));
            wbb += gtg;
            let mut wll = w.view_mut((li, li), (3, 3));
            wll += DMatrix::<f64>::identity(3, 3) * rho2;
            let cross = &blk.basis * (-rho2);
            w.view_mut((li, blk.range.start), (3, bk)).copy_from(&cross);
            w.view_mut((blk.range.start, li), (bk, 3))
                .copy_from(&cross.transpose());
        }
    }

    // Equalities.
    let mut eq = RowBuilder::new(n);
    for i in 0..nf {
        let mut row = DVector::zeros(n);
        row.rows_mut(0, nq).copy_from(&snap.h.row(i).transpose());
        row -= force_map.row(i).transpose();
        eq.push(row, -snap.bias[i], RowTag::FloatingDynamics { dof: i });
    }
    for (k, c) in snap.contacts.iter().enumerate() {
        let v = &c.jacobian * &snap.qdot;
        for ax in 0..3 {
            let mut row = DVector::zeros(n);
            row.rows_mut(0, nq).copy_from(&c.jacobian.row(ax).transpose());
            row[eta.start + 3 * k + ax] = -1.0;
            eq.push(
                row,
                -c.jdot_qdot[ax] - params.noslip_alpha * v[ax],
                RowTag::NoSlip { contact: c.id, axis: ax },
            );
        }
    }
    if let Some(r) = &lambda {
        for (k, (c, blk)) in snap.contacts.iter().zip(&blocks).enumerate() {
            for ax in 0..3 {
                let mut row = DVector::zeros(n);
                row[r.start + 3 * k + ax] = 1.0;
                for j in 0..blk.range.len() {
                    row[blk.range.start + j] = -blk.basis[(ax, j)];
                }
                eq.push(row, 0.0, RowTag::ContactForce { contact: c.id, axis: ax });
            }
        }
    }

    // Inequalities. τ = B⁻¹(H_a q̈ + C_a − Φ_aᵀλ).
    let mut ineq = RowBuilder::new(n);
    let mut tau_rows = DMatrix::zeros(na, n);
    tau_rows
        .columns_mut(0, nq)
        .copy_from(&snap.h.rows(nf, na));
    tau_rows -= force_map.rows(nf, na);
    let tau_rows = &binv * tau_rows;
    let tau_c = &binv * snap.bias.rows(nf, na);
    for j in 0..na {
        let row = tau_rows.row(j).transpose();
        if params.tau_max[j].is_finite() {
            ineq.push(row.clone(), params.tau_max[j] - tau_c[j], RowTag::TorqueUpper { joint: j });
        }
        if params.tau_min[j].is_finite() {
            ineq.push(-row, tau_c[j] - params.tau_min[j], RowTag::TorqueLower { joint: j });
        }
    }
    for (c, blk) in snap.contacts.iter().zip(&blocks) {
        let start = blk.range.start;
        let k = blk.range.len();
        if c.mu == 0.0 {
            let r = ineq.unit(start, -1.0);
            ineq.push(r, 0.0, RowTag::NormalNonneg { contact: c.id });
            continue;
        }
        match params.friction {
            FrictionParam::GeneratingVectors => {
                for i in 0..k {
                    let r = ineq.unit(start + i, -1.0);
                    ineq.push(r, 0.0, RowTag::FrictionNonneg { contact: c.id, k: i });
                }
            }
            FrictionParam::StewartTrinkle => {
                let st = stewart_trinkle_rows(c);
                for (ri, row) in st.a.row_iter().enumerate() {
                    let mut r = DVector::zeros(n);
                    r.rows_mut(start, k).copy_from(&row.transpose());
                    let tag = match ri {
                        0 => RowTag::NormalNonneg { contact: c.id },
                        _ if ri == k => RowTag::FrictionCap { contact: c.id },
                        _ => RowTag::FrictionNonneg { contact: c.id, k: ri - 1 },
                    };
                    ineq.push(r, st.b[ri], tag);
                }
            }
        }
    }
    for (k, c) in snap.contacts.iter().enumerate() {
        for ax in 0..3 {
            let i = eta.start + 3 * k + ax;
            let r = ineq.unit(i, 1.0);
            ineq.push(r, params.eta_max, RowTag::SlackUpper { contact: c.id, axis: ax });
            let r = ineq.unit(i, -1.0);
            ineq.push(r, -params.eta_min, RowTag::SlackLower { contact: c.id, axis: ax });
        }
    }
    for (j, flag) in snap.limit_flags.iter().enumerate() {
        match flag {
            LimitFlag::Free => {}
            LimitFlag::AtMin => {
                let r = ineq.unit(nf + j, -1.0);
                ineq.push(r, 0.0, RowTag::JointLimitLower { joint: j });
            }
            LimitFlag::AtMax => {
                let r = ineq.unit(nf + j, 1.0);
                ineq.push(r, 0.0, RowTag::JointLimitUpper { joint: j });
            }
        }
    }

    let (a, b, eq_tags) = eq.finish();
    let (p, f, ineq_tags) = ineq.finish();
    let structure = (!explicit).then_some(structure);
    let qp = StandardQP::from_parts_unchecked(w, g, a, b, p, f, structure);
    Ok(WholeBodyQp {
        qp,
        nq,
        blocks,
        lambda,
        eta,
        eq_tags,
        ineq_tags,
    })
}

/// `τ = B⁻¹ [H_a q̈ + C_a − Φ_aᵀλ]`.
pub fn recover_torques(
    snap: &DynamicsSnapshot,
    qdd: &DVector<f64>,
    forces: &[Vector3<f64>],
) -> Result<DVector<f64>, AssemblyError> {
    if qdd.len() != snap.nq || forces.len() != snap.contacts.len() {
        return Err(AssemblyError::Dimension("qdd or forces".into()));
    }
    let (nf, na) = (snap.nf, snap.na());
    let rhs = &snap.h * qdd + &snap.bias - snap.generalized_force(forces);
    let binv = snap
        .b_input
        .clone()
        .try_inverse()
        .ok_or(AssemblyError::SingularInputMap)?;
    Ok(binv * rhs.rows(nf, na))
}

/// `‖H q̈ + C − Bτ − Φᵀλ‖∞` over all rows (`tau = None` checks only the
/// floating rows).
pub fn dynamics_residual(
    snap: &DynamicsSnapshot,
    qdd: &DVector<f64>,
    tau: Option<&DVector<f64>>,
    forces: &[Vector3<f64>],
) -> f64 {
    let mut r = &snap.h * qdd + &snap.bias - snap.generalized_force(forces);
    match tau {
        Some(t) => {
            let bt = &snap.b_input * t;
            let mut act = r.rows_mut(snap.nf, snap.na());
            act -= bt;
            r.amax()
        }
        None => r.rows(0, snap.nf).amax(),
    }
}

/// `q̈_des = K_p (q_des − q) − K_d q̇`, same scalar gains for every coordinate.
pub fn pd_desired_accel(
    q_des: &DVector<f64>,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    kp: f64,
    kd: f64,
) -> DVector<f64> {
    (q_des - q) * kp - qdot * kd
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contact(mu: f64, nd: usize) -> ContactPoint {
        ContactPoint {
            id: 0,
            position: Vector3::zeros(),
            normal: Vector3::z(),
            tangents: even_tangents(nd),
            mu,
            jacobian: DMatrix::zeros(3, 1),
            jdot_qdot: Vector3::zeros(),
        }
    }

    #[test]
    fn generators_unit_friction() {
        let g = friction_generators(&contact(1.0, 4));
        let expect = [
            Vector3::new(1.0, 0.0, 1.0),
            Vector3::new(0.0, 1.0, 1.0),
            Vector3::new(-1.0, 0.0, 1.0),
            Vector3::new(0.0, -1.0, 1.0),
        ];
        assert_eq!(g, expect);
    }

    #[test]
    fn generators_frictionless() {
        assert!(friction_generators(&contact(0.0, 4))
            .iter()
            .all(|v| *v == Vector3::z()));
    }

    #[test]
    fn stewart_trinkle_rows_interior_and_cap() {
        let c = contact(1.0, 4);
        let st = stewart_trinkle_rows(&c);
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let r = &st.a * x - &st.b;
        // z > 0 strictly, β at zero bounds, cap strictly
        assert!(r[0] < 0.0 && r[5] < 0.0);
        let c = contact(0.5, 4);
        let st = stewart_trinkle_rows(&c);
        let x = DVector::from_vec(vec![1.0, 0.2, 0.1, 0.1, 0.1]);
        let r = &st.a * x - &st.b;
        assert!(r[5].abs() < 1e-15);
    }

    #[test]
    fn pd_rule() {
        let q = DVector::from_vec(vec![0.0, 0.0]);
        let qd = DVector::from_vec(vec![0.1, 0.0]);
        let a = pd_desired_accel(&qd, &q, &DVector::zeros(2), 100.0, 20.0);
        assert!((a[0] - 10.0).abs() < 1e-12 && a[1] == 0.0);
        assert_eq!(pd_desired_accel(&q, &q, &DVector::zeros(2), 100.0, 20.0), DVector::zeros(2));
    }

    #[test]
    fn cone_violation_signs() {
        let c = contact(0.5, 4);
        assert_eq!(cone_violation(&c, &Vector3::new(0.0, 0.0, 1.0)), 0.0);
        assert!(cone_violation(&c, &Vector3::new(0.49, 0.0, 1.0)) == 0.0);
        assert!(cone_violation(&c, &Vector3::new(0.6, 0.0, 1.0)) > 0.0);
        assert!(cone_violation(&c, &Vector3::new(0.0, 0.0, -1.0)) > 0.0);
    }

    #[test]
    fn row_tags_render() {
        let t = RowTag::NoSlip { contact: 3, axis: 2 };
        assert_eq!(t.to_string(), "accel c=3 z");
        assert_eq!(t.family(), "accel");
    }
}
