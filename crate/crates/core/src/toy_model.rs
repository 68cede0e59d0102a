//! Planar floating-base articulated model.
//!
//! Links form a tree in the sagittal `(x, z)` plane. Coordinates are
//! `q = [x, z, pitch, joints...]` with a floating base, or just the joint
//! angles with a fixed root. Contact quantities are embedded in 3-D with
//! `y ≡ 0` so that friction cones and the 2-D ZMP model keep their usual
//! shapes; the `y` rows of every Jacobian are zero.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use serde::Deserialize;
use thiserror::Error;

use crate::whole_body::{even_tangents, ContactPoint, DynamicsSnapshot, LimitFlag};

/// Position band around a joint limit inside which the limit counts as hit.
pub const JOINT_LIMIT_BAND: f64 = 1e-6;

pub const DEFAULT_MODEL_TOML: &str = include_str!("../models/biped.toml");

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("inverse kinematics did not converge (residual {0:e})")]
    Ik(f64),
}

#[derive(Debug, Deserialize)]
struct ModelFile {
    name: String,
    #[serde(default = "default_gravity")]
    gravity: f64,
    #[serde(default = "default_true")]
    floating_base: bool,
    #[serde(default = "default_mu")]
    mu: f64,
    link: Vec<LinkFile>,
    #[serde(default)]
    foot: Vec<FootFile>,
}

fn default_gravity() -> f64 {
    9.81
}
fn default_true() -> bool {
    true
}
fn default_mu() -> f64 {
    0.8
}

#[derive(Debug, Deserialize)]
struct LinkFile {
    name: String,
    parent: Option<String>,
    #[serde(default)]
    origin: [f64; 2],
    mass: f64,
    inertia: f64,
    #[serde(default)]
    com: [f64; 2],
    q_min: Option<f64>,
    q_max: Option<f64>,
    tau_max: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct FootFile {
    name: String,
    link: String,
    points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    /// Index into `q`.
    pub coord: usize,
    pub q_min: f64,
    pub q_max: f64,
    pub tau_min: f64,
    pub tau_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    pub origin: Vector2<f64>,
    pub mass: f64,
    pub inertia: f64,
    pub com: Vector2<f64>,
    /// `None` for the root.
    pub joint: Option<Joint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Foot {
    pub name: String,
    pub link: usize,
    pub points: Vec<Vector2<f64>>,
}

/// Stable identifier of a contact point: `(foot, point)` flattened in
/// declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContactId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarModel {
    pub name: String,
    pub gravity: f64,
    pub floating: bool,
    pub mu: f64,
    pub links: Vec<Link>,
    pub feet: Vec<Foot>,
    contacts: Vec<(usize, usize)>,
    /// Coordinates moving each link, root first.
    paths: Vec<Vec<usize>>,
}

/// Per-link world pose and angular rate.
#[derive(Debug, Clone)]
pub struct Frames {
    pub angle: Vec<f64>,
    pub origin: Vec<Vector2<f64>>,
    pub omega: Vec<f64>,
}

fn rot(phi: f64) -> Matrix2<f64> {
    let (s, c) = phi.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Planar cross with the unit rotation axis: `(a, b) ↦ (-b, a)`.
fn perp(v: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-v[1], v[0])
}

impl PlanarModel {
    pub fn default_biped() -> Self {
        Self::from_toml(DEFAULT_MODEL_TOML).expect("shipped model is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        Self::from_file(file)
    }

    fn from_file(file: ModelFile) -> Result<Self, ModelError> {
        let cfg = |m: String| Err(ModelError::Config(m));
        if file.link.is_empty() {
            return cfg("no links".into());
        }
        if !(file.gravity > 0.0) || !(file.mu >= 0.0) {
            return cfg("gravity must be positive and mu nonnegative".into());
        }
        let nf = if file.floating_base { 3 } else { 0 };
        let mut links: Vec<Link> = Vec::with_capacity(file.link.len());
        for (i, l) in file.link.iter().enumerate() {
            if !(l.mass > 0.0) || !(l.inertia > 0.0) {
                return cfg(format!("link {}: mass and inertia must be positive", l.name));
            }
            if links.iter().any(|p| p.name == l.name) {
                return cfg(format!("duplicate link {}", l.name));
            }
            let parent = match (&l.parent, i) {
                (None, 0) => None,
                (None, _) => return cfg(format!("link {} has no parent", l.name)),
                (Some(_), 0) => return cfg("first link must be the root".into()),
                (Some(p), _) => Some(
                    links
                        .iter()
                        .position(|x| &x.name == p)
                        .ok_or_else(|| ModelError::Config(format!("unknown parent {p}")))?,
                ),
            };
            let joint = match parent {
                None => None,
                Some(_) => {
                    let q_min = l.q_min.unwrap_or(-std::f64::consts::PI);
                    let q_max = l.q_max.unwrap_or(std::f64::consts::PI);
                    let tau = l.tau_max.unwrap_or(f64::INFINITY);
                    if !(q_min < q_max) || !(tau > 0.0) {
                        return cfg(format!("link {}: limits not ordered", l.name));
                    }
                    Some(Joint {
                        coord: nf + i - 1,
                        q_min,
                        q_max,
                        tau_min: -tau,
                        tau_max: tau,
                    })
                }
            };
            links.push(Link {
                name: l.name.clone(),
                parent,
                origin: Vector2::from(l.origin),
                mass: l.mass,
                inertia: l.inertia,
                com: Vector2::from(l.com),
                joint,
            });
        }
        let mut feet = Vec::new();
        let mut contacts = Vec::new();
        for f in &file.foot {
            let link = links
                .iter()
                .position(|x| x.name == f.link)
                .ok_or_else(|| ModelError::Config(format!("foot {}: unknown link", f.name)))?;
            for k in 0..f.points.len() {
                contacts.push((feet.len(), k));
            }
            feet.push(Foot {
                name: f.name.clone(),
                link,
                points: f.points.iter().map(|p| Vector2::from(*p)).collect(),
            });
        }
        let mut paths: Vec<Vec<usize>> = Vec::with_capacity(links.len());
        for l in &links {
            let mut p = match l.parent {
                None => (0..nf).collect(),
                Some(par) => paths[par].clone(),
            };
            if let Some(j) = &l.joint {
                p.push(j.coord);
            }
            paths.push(p);
        }
        Ok(Self {
            name: file.name,
            gravity: file.gravity,
            floating: file.floating_base,
            mu: file.mu,
            links,
            feet,
            contacts,
            paths,
        })
    }

    pub fn nq(&self) -> usize {
        self.nf() + self.links.len() - 1
    }

    pub fn nf(&self) -> usize {
        if self.floating {
            3
        } else {
            0
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn joints(&self) -> impl Iterator<Item = &Joint> {
        self.links.iter().filter_map(|l| l.joint.as_ref())
    }

    pub fn contact_ids(&self) -> Vec<ContactId> {
        (0..self.contacts.len()).map(ContactId).collect()
    }

    pub fn foot_contacts(&self, foot: usize) -> Vec<ContactId> {
        self.contacts
            .iter()
            .enumerate()
            .filter(|(_, c)| c.0 == foot)
            .map(|(i, _)| ContactId(i))
            .collect()
    }

    pub fn contact_name(&self, id: ContactId) -> String {
        let (f, k) = self.contacts[id.0];
        format!("{}.{}", self.feet[f].name, k)
    }

    pub fn foot_index(&self, name: &str) -> Option<usize> {
        self.feet.iter().position(|f| f.name == name)
    }

    fn check_q(&self, q: &DVector<f64>) -> Result<(), ModelError> {
        if q.len() != self.nq() {
            return Err(ModelError::Dimension(format!(
                "q has {} entries, model has {}",
                q.len(),
                self.nq()
            )));
        }
        Ok(())
    }

    pub fn frames(&self, q: &DVector<f64>, qdot: Option<&DVector<f64>>) -> Frames {
        let nl = self.links.len();
        let mut angle = vec![0.0; nl];
        let mut origin = vec![Vector2::zeros(); nl];
        let mut omega = vec![0.0; nl];
        for (i, l) in self.links.iter().enumerate() {
            match (l.parent, &l.joint) {
                (Some(p), Some(j)) => {
                    angle[i] = angle[p] + q[j.coord];
                    origin[i] = origin[p] + rot(angle[p]) * l.origin;
                    omega[i] = omega[p] + qdot.map_or(0.0, |v| v[j.coord]);
                }
                _ => {
                    if self.floating {
                        origin[i] = Vector2::new(q[0], q[1]);
                        angle[i] = q[2];
                        omega[i] = qdot.map_or(0.0, |v| v[2]);
                    }
                }
            }
        }
        Frames {
            angle,
            origin,
            omega,
        }
    }

    /// World position of point `s` given in the frame of `link`.
    pub fn point_position(&self, fr: &Frames, link: usize, s: &Vector2<f64>) -> Vector2<f64> {
        fr.origin[link] + rot(fr.angle[link]) * s
    }

    /// 2×nq Jacobian of a point fixed on `link`.
    pub fn point_jacobian(&self, fr: &Frames, link: usize, s: &Vector2<f64>) -> DMatrix<f64> {
        let p = self.point_position(fr, link, s);
        let mut jac = DMatrix::zeros(2, self.nq());
        let mut k = link;
        loop {
            let l = &self.links[k];
            match (&l.joint, l.parent) {
                (Some(j), Some(par)) => {
                    jac.set_column(j.coord, &perp(&(p - fr.origin[k])));
                    k = par;
                }
                _ => {
                    if self.floating {
                        jac[(0, 0)] = 1.0;
                        jac[(1, 1)] = 1.0;
                        jac.set_column(2, &perp(&(p - fr.origin[k])));
                    }
                    break;
                }
            }
        }
        jac
    }

    /// Velocity-product acceleration `J̇ q̇` of a point on `link`: every
    /// rigid segment `R(φ_f) r` contributes `-ω_f² R(φ_f) r`.
    pub fn point_jdot_qdot(&self, fr: &Frames, link: usize, s: &Vector2<f64>) -> Vector2<f64> {
        let mut acc = -fr.omega[link].powi(2) * (rot(fr.angle[link]) * s);
        let mut k = link;
        while let Some(par) = self.links[k].parent {
            acc -= fr.omega[par].powi(2) * (rot(fr.angle[par]) * self.links[k].origin);
            k = par;
        }
        acc
    }

    /// Angular Jacobian row of `link` (entries 0/1).
    pub fn angular_jacobian(&self, link: usize) -> DVector<f64> {
        let mut row = DVector::zeros(self.nq());
        for &c in &self.paths[link] {
            if !(self.floating && c < 2) {
                row[c] = 1.0;
            }
        }
        row
    }

    pub fn com(&self, q: &DVector<f64>) -> Vector2<f64> {
        let fr = self.frames(q, None);
        let m = self.total_mass();
        self.links
            .iter()
            .enumerate()
            .map(|(i, l)| self.point_position(&fr, i, &l.com) * l.mass)
            .sum::<Vector2<f64>>()
            / m
    }

    /// `(x, z)` COM Jacobian and `J̇q̇`.
    pub fn com_jacobian(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> (DMatrix<f64>, Vector2<f64>) {
        let fr = self.frames(q, Some(qdot));
        let m = self.total_mass();
        let mut jac = DMatrix::zeros(2, self.nq());
        let mut jd = Vector2::zeros();
        for (i, l) in self.links.iter().enumerate() {
            jac += self.point_jacobian(&fr, i, &l.com) * (l.mass / m);
            jd += self.point_jdot_qdot(&fr, i, &l.com) * (l.mass / m);
        }
        (jac, jd)
    }

    /// Mass matrix by the composite-rigid-body construction with 3×3 planar
    /// spatial inertias expressed at the world origin.
    pub fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let fr = self.frames(q, None);
        let nl = self.links.len();
        let nq = self.nq();
        let mut comp: Vec<Matrix3<f64>> = self
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let c = self.point_position(&fr, i, &l.com);
                let sc = perp(&c);
                let m = l.mass;
                Matrix3::new(
                    l.inertia + m * c.norm_squared(),
                    m * sc[0],
                    m * sc[1],
                    m * sc[0],
                    m,
                    0.0,
                    m * sc[1],
                    0.0,
                    m,
                )
            })
            .collect();
        for i in (1..nl).rev() {
            let p = self.links[i].parent.expect("non-root");
            let ci = comp[i];
            comp[p] += ci;
        }
        // motion subspace (ω, v₀) per coordinate and the body it belongs to
        let mut motion = vec![Vector3::zeros(); nq];
        let mut body = vec![0usize; nq];
        if self.floating {
            motion[0] = Vector3::new(0.0, 1.0, 0.0);
            motion[1] = Vector3::new(0.0, 0.0, 1.0);
            let o = perp(&fr.origin[0]);
            motion[2] = Vector3::new(1.0, -o[0], -o[1]);
        }
        for (i, l) in self.links.iter().enumerate() {
            if let Some(j) = &l.joint {
                let o = perp(&fr.origin[i]);
                motion[j.coord] = Vector3::new(1.0, -o[0], -o[1]);
                body[j.coord] = i;
            }
        }
        let mut h = DMatrix::zeros(nq, nq);
        for i in 0..nq {
            let f = comp[body[i]] * motion[i];
            for &j in &self.paths[body[i]] {
                let v = motion[j].dot(&f);
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        h
    }

    /// Velocity-product plus gravity terms `C(q, q̇)`, so that
    /// `H q̈ + C = Bτ + Φᵀλ`.
    pub fn bias(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> DVector<f64> {
        let fr = self.frames(q, Some(qdot));
        let mut c = DVector::zeros(self.nq());
        for (i, l) in self.links.iter().enumerate() {
            let jac = self.point_jacobian(&fr, i, &l.com);
            let acc = self.point_jdot_qdot(&fr, i, &l.com) + Vector2::new(0.0, self.gravity);
            c += jac.transpose() * (acc * l.mass);
        }
        c
    }

    pub fn kinetic_energy(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> f64 {
        let fr = self.frames(q, Some(qdot));
        self.links
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let v = self.point_jacobian(&fr, i, &l.com) * qdot;
                0.5 * l.mass * v.norm_squared() + 0.5 * l.inertia * fr.omega[i].powi(2)
            })
            .sum()
    }

    /// `Σ m g z_com` with the datum at `z = 0`.
    pub fn potential_energy(&self, q: &DVector<f64>) -> f64 {
        let fr = self.frames(q, None);
        self.links
            .iter()
            .enumerate()
            .map(|(i, l)| l.mass * self.gravity * self.point_position(&fr, i, &l.com)[1])
            .sum()
    }

    /// World position `(x, z)` of a contact point.
    pub fn contact_position(&self, q: &DVector<f64>, id: ContactId) -> Vector2<f64> {
        let (f, k) = self.contacts[id.0];
        let foot = &self.feet[f];
        self.point_position(&self.frames(q, None), foot.link, &foot.points[k])
    }

    /// Pose `(x, z, angle)` of a foot link frame.
    pub fn foot_pose(&self, q: &DVector<f64>, foot: usize) -> Vector3<f64> {
        let fr = self.frames(q, None);
        let l = self.feet[foot].link;
        Vector3::new(fr.origin[l][0], fr.origin[l][1], fr.angle[l])
    }

    pub fn limit_flags(&self, q: &DVector<f64>) -> Vec<LimitFlag> {
        self.joints()
            .map(|j| {
                if q[j.coord] <= j.q_min + JOINT_LIMIT_BAND {
                    LimitFlag::AtMin
                } else if q[j.coord] >= j.q_max - JOINT_LIMIT_BAND {
                    LimitFlag::AtMax
                } else {
                    LimitFlag::Free
                }
            })
            .collect()
    }

    pub fn torque_limits(&self) -> (DVector<f64>, DVector<f64>) {
        let lo: Vec<f64> = self.joints().map(|j| j.tau_min).collect();
        let hi: Vec<f64> = self.joints().map(|j| j.tau_max).collect();
        (DVector::from_vec(lo), DVector::from_vec(hi))
    }

    pub fn dynamics_snapshot(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        active: &[ContactId],
        n_d: usize,
    ) -> Result<DynamicsSnapshot, ModelError> {
        self.check_q(q)?;
        self.check_q(qdot)?;
        let nq = self.nq();
        let fr = self.frames(q, Some(qdot));
        let tangents = even_tangents(n_d);
        let mut contacts = Vec::with_capacity(active.len());
        for &id in active {
            let (f, k) = *self
                .contacts
                .get(id.0)
                .ok_or_else(|| ModelError::Dimension(format!("unknown contact {}", id.0)))?;
            let foot = &self.feet[f];
            let s = foot.points[k];
            let p = self.point_position(&fr, foot.link, &s);
            let j2 = self.point_jacobian(&fr, foot.link, &s);
            let jd2 = self.point_jdot_qdot(&fr, foot.link, &s);
            let mut jac = DMatrix::zeros(3, nq);
            jac.row_mut(0).copy_from(&j2.row(0));
            jac.row_mut(2).copy_from(&j2.row(1));
            contacts.push(ContactPoint {
                id: id.0,
                position: Vector3::new(p[0], 0.0, p[1]),
                normal: Vector3::z(),
                tangents: tangents.clone(),
                mu: self.mu,
                jacobian: jac,
                jdot_qdot: Vector3::new(jd2[0], 0.0, jd2[1]),
            });
        }
        let (jc2, jdc2) = self.com_jacobian(q, qdot);
        let mut j_com = DMatrix::zeros(2, nq);
        j_com.row_mut(0).copy_from(&jc2.row(0));
        let na = nq - self.nf();
        Ok(DynamicsSnapshot {
            nq,
            nf: self.nf(),
            h: self.mass_matrix(q),
            bias: self.bias(q, qdot),
            b_input: DMatrix::identity(na, na),
            contacts,
            j_com,
            jdot_qdot_com: Vector2::new(jdc2[0], 0.0),
            com_height: self.com(q)[1],
            q: q.clone(),
            qdot: qdot.clone(),
            limit_flags: self.limit_flags(q),
        })
    }

    /// Newton solve for a configuration meeting `targets`, started at `q0`.
    pub fn inverse_kinematics(
        &self,
        q0: &DVector<f64>,
        targets: &IkTargets,
    ) -> Result<DVector<f64>, ModelError> {
        self.check_q(q0)?;
        let mut q = q0.clone();
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let (r, jac) = self.ik_residual(&q, targets);
            last = r.amax();
            if last < 1e-12 {
                return Ok(q);
            }
            let step = jac
                .svd(true, true)
                .solve(&r, 1e-12)
                .map_err(|e| ModelError::Config(e.to_string()))?;
            q -= step;
        }
        Err(ModelError::Ik(last))
    }

    fn ik_residual(&self, q: &DVector<f64>, t: &IkTargets) -> (DVector<f64>, DMatrix<f64>) {
        let fr = self.frames(q, None);
        let nq = self.nq();
        let rows = 3 * t.feet.len() + 3;
        let mut r = DVector::zeros(rows);
        let mut jac = DMatrix::zeros(rows, nq);
        for (k, (foot, pose)) in t.feet.iter().enumerate() {
            let l = self.feet[*foot].link;
            let pos = fr.origin[l];
            r[3 * k] = pos[0] - pose[0];
            r[3 * k + 1] = pos[1] - pose[1];
            r[3 * k + 2] = fr.angle[l] - pose[2];
            let pj = self.point_jacobian(&fr, l, &Vector2::zeros());
            jac.row_mut(3 * k).copy_from(&pj.row(0));
            jac.row_mut(3 * k + 1).copy_from(&pj.row(1));
            jac.row_mut(3 * k + 2)
                .copy_from(&self.angular_jacobian(l).transpose());
        }
        let base = 3 * t.feet.len();
        let (cj, _) = self.com_jacobian(q, &DVector::zeros(nq));
        r[base] = self.com(q)[0] - t.com_x;
        jac.row_mut(base).copy_from(&cj.row(0));
        let root = self.point_jacobian(&fr, 0, &Vector2::zeros());
        r[base + 1] = fr.origin[0][1] - t.base_z;
        jac.row_mut(base + 1).copy_from(&root.row(1));
        r[base + 2] = fr.angle[0] - t.base_pitch;
        jac.row_mut(base + 2)
            .copy_from(&self.angular_jacobian(0).transpose());
        (r, jac)
    }

    /// Double-support stance with both feet flat at `foot_x` (ankle
    /// positions), pelvis at `base_z`, upright torso and the COM at `com_x`.
    pub fn standing_posture(
        &self,
        foot_x: &[f64],
        base_z: f64,
        com_x: f64,
    ) -> Result<DVector<f64>, ModelError> {
        let ankle_z = self.ankle_height();
        let targets = IkTargets {
            feet: foot_x
                .iter()
                .enumerate()
                .map(|(f, x)| (f, Vector3::new(*x, ankle_z, 0.0)))
                .collect(),
            com_x,
            base_z,
            base_pitch: 0.0,
        };
        self.inverse_kinematics(&self.crouch_guess(base_z, foot_x), &targets)
    }

    /// Ankle height with the foot's contact points on the ground.
    pub fn ankle_height(&self) -> f64 {
        -self
            .feet
            .first()
            .map(|f| f.points.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min))
            .unwrap_or(0.0)
    }

    fn crouch_guess(&self, base_z: f64, foot_x: &[f64]) -> DVector<f64> {
        let mut q = DVector::zeros(self.nq());
        if self.floating {
            q[1] = base_z;
            q[0] = foot_x.iter().sum::<f64>() / foot_x.len().max(1) as f64;
        }
        // knee-bent seed; hip and ankle split the knee angle
        for (i, l) in self.links.iter().enumerate() {
            if let Some(j) = &l.joint {
                let depth = self.paths[i].len() - self.nf();
                q[j.coord] = match depth {
                    1 => 0.3,
                    2 => -0.6,
                    _ => 0.3,
                };
            }
        }
        q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkTargets {
    /// `(foot index, (x, z, angle))` of the foot link frame.
    pub feet: Vec<(usize, Vector3<f64>)>,
    pub com_x: f64,
    pub base_z: f64,
    pub base_pitch: f64,
}

/// Semi-implicit Euler: `q̇' = q̇ + dt q̈`, `q' = q + dt q̇'`.
pub fn integrate_step(
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    qdd: &DVector<f64>,
    dt: f64,
) -> (DVector<f64>, DVector<f64>) {
    let v = qdot + qdd * dt;
    (q + &v * dt, v)
}

/// Piecewise-constant set of active contacts: `(start time, ids)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSchedule {
    phases: Vec<(f64, Vec<ContactId>)>,
}

impl ContactSchedule {
    pub fn new(mut phases: Vec<(f64, Vec<ContactId>)>) -> Self {
        phases.sort_by(|a, b| a.0.total_cmp(&b.0));
        for p in &mut phases {
            p.1.sort();
            p.1.dedup();
        }
        Self { phases }
    }

    pub fn constant(ids: Vec<ContactId>) -> Self {
        Self::new(vec![(f64::NEG_INFINITY, ids)])
    }

    pub fn phases(&self) -> &[(f64, Vec<ContactId>)] {
        &self.phases
    }

    pub fn active_at(&self, t: f64) -> &[ContactId] {
        let i = self.phases.partition_point(|p| p.0 <= t);
        if i == 0 {
            &[]
        } else {
            &self.phases[i - 1].1
        }
    }
}
