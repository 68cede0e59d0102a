//! Closed-loop scenario runner, recorded-sequence benchmark and friction
//! comparison.
//!
//! One control step: snapshot → value function → QP → solve (warm-started
//! active set, interior-point failover) → torques → integrate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DVector, Matrix2, Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::active_set::{self, SolverConfig, WarmStartState};
use crate::batch;
use crate::qp_types::{kkt_residual, ActiveSet, QpError, QpSolution, QpStatus};
use crate::reference::{interior_point_solve, InteriorPointConfig};
use crate::toy_model::{
    integrate_step, ContactId, ContactSchedule, IkTargets, ModelError, PlanarModel,
};
use crate::whole_body::{
    build_qp, cone_violation, dynamics_residual, pd_desired_accel, recover_torques,
    AssemblyError, ControllerParams, DynamicsSnapshot, ForceMode, FrictionParam, RowTag,
    WholeBodyQp,
};
use crate::zmp_lqr::{
    lqr_balance, nominal_com_traj, surrogate_value, tvlqr, zmp_output, BalanceDesign,
    ComZmpModel, LqrError, PiecewiseLinear, QuadraticValueFunction, SurrogateCoeffs,
    TrackingProblem, DEFAULT_RICCATI_DT,
};

pub const BUILTIN_SCENARIOS: &[(&str, &str)] = &[
    ("balance", include_str!("../scenarios/balance.toml")),
    ("stand", include_str!("../scenarios/stand.toml")),
    ("push", include_str!("../scenarios/push.toml")),
    ("walk", include_str!("../scenarios/walk.toml")),
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lqr(#[from] LqrError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("solver abort at step {step} (t = {t}): {reason}")]
    Abort {
        step: usize,
        t: f64,
        reason: String,
        /// QP text followed by its row provenance.
        dump: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Balance,
    Walk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    #[default]
    ActiveSet,
    InteriorPoint,
}

impl SolverKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::ActiveSet => "active-set",
            Self::InteriorPoint => "interior-point",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrationMode {
    /// Integrate the QP's q̈ directly.
    #[default]
    Idealized,
    /// Apply recovered (clamped) τ and λ to the full dynamics.
    TorqueForward,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub iter_max: usize,
    pub kkt_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            iter_max: 10,
            kkt_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSettings {
    pub w_qdd: f64,
    pub eps_beta: f64,
    pub noslip_alpha: f64,
    pub eta_bound: f64,
    pub n_d: usize,
    pub friction: FrictionParam,
    pub force_mode: ForceMode,
    pub explicit_penalty: f64,
    pub kp: f64,
    pub kd: f64,
    /// Diagonal of the ZMP output weight.
    pub qy: [f64; 2],
    /// Overrides the model's ground friction.
    pub mu: Option<f64>,
    /// Overrides every joint's torque limit (symmetric).
    pub tau_limit: Option<f64>,
    /// Height below which a scheduled contact counts as touching (m).
    pub contact_tol: f64,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self {
            w_qdd: 1e-3,
            eps_beta: 1e-8,
            noslip_alpha: 5.0,
            eta_bound: 10.0,
            n_d: 4,
            friction: FrictionParam::GeneratingVectors,
            force_mode: ForceMode::Eliminated,
            explicit_penalty: 1.0,
            kp: 100.0,
            kd: 20.0,
            qy: [1.0, 1.0],
            mu: None,
            tau_limit: None,
            contact_tol: 5e-3,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalancePlan {
    pub base_z: f64,
    #[serde(default = "two_feet")]
    pub foot_x: Vec<f64>,
    /// `[time, offset]`: ZMP setpoint moves to support centre + offset.
    #[serde(default)]
    pub shifts: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub foot: String,
    pub x: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkPlan {
    pub base_z: f64,
    #[serde(default = "two_feet")]
    pub foot_x: Vec<f64>,
    pub initial_stand: f64,
    pub double_support: f64,
    pub single_support: f64,
    pub final_stand: f64,
    pub lift: f64,
    pub steps: Vec<StepSpec>,
}

fn two_feet() -> Vec<f64> {
    vec![0.0, 0.0]
}

/// Pelvis velocity impulse at `time`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Push {
    pub time: f64,
    #[serde(default)]
    pub velocity: f64,
    /// Seeded uniform extra velocity in `[-random, random]`.
    #[serde(default)]
    pub random: f64,
}

fn default_dt() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub mode: Mode,
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(default)]
    pub integration: IntegrationMode,
    #[serde(default)]
    pub seed: u64,
    /// Path to a model file; the shipped biped when absent.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub solver_config: SolverSettings,
    #[serde(default)]
    pub controller: ControllerSettings,
    pub balance: Option<BalancePlan>,
    pub walk: Option<WalkPlan>,
    pub push: Option<Push>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let sc: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        BUILTIN_SCENARIOS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| Self::from_toml(t).expect("shipped scenario is valid"))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if !(self.dt > 0.0) || !(self.duration > 0.0) {
            return bad("dt and duration must be positive");
        }
        if self.solver_config.iter_max == 0 {
            return bad("iter_max must be at least 1");
        }
        match self.mode {
            Mode::Balance if self.balance.is_none() => return bad("balance mode needs [balance]"),
            Mode::Walk => match &self.walk {
                None => return bad("walk mode needs [walk]"),
                Some(w) => {
                    if w.double_support <= 0.0 || w.single_support <= 0.0 || w.steps.is_empty() {
                        return bad("walk phases must be positive and steps non-empty");
                    }
                }
            },
            _ => {}
        }
        Ok(())
    }

    pub fn load_model(&self) -> Result<PlanarModel, HarnessError> {
        let mut m = match &self.model {
            None => PlanarModel::default_biped(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?;
                PlanarModel::from_toml(&text)?
            }
        };
        if let Some(mu) = self.controller.mu {
            m.mu = mu;
        }
        Ok(m)
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            iter_max: self.solver_config.iter_max,
            kkt_tol: self.solver_config.kkt_tol,
            ..SolverConfig::default()
        }
    }

    pub fn controller_params(&self, model: &PlanarModel) -> ControllerParams {
        let c = &self.controller;
        let (mut lo, mut hi) = model.torque_limits();
        if let Some(t) = c.tau_limit {
            lo.fill(-t);
            hi.fill(t);
        }
        ControllerParams {
            w_qdd: c.w_qdd,
            eps_beta: c.eps_beta,
            noslip_alpha: c.noslip_alpha,
            eta_min: -c.eta_bound,
            eta_max: c.eta_bound,
            n_d: c.n_d,
            friction: c.friction,
            kp: c.kp,
            kd: c.kd,
            force_mode: c.force_mode,
            explicit_penalty: c.explicit_penalty,
            ..ControllerParams::with_torque_limits(lo, hi)
        }
    }

    /// Pelvis velocity impulse `(step index, Δẋ)`, if any.
    pub fn push_impulse(&self) -> Option<(usize, f64)> {
        let p = self.push.as_ref()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let extra = if p.random > 0.0 {
            rng.random_range(-p.random..=p.random)
        } else {
            0.0
        };
        Some(((p.time / self.dt).round() as usize, p.velocity + extra))
    }
}

/// One swing phase of a walking plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Swing {
    pub foot: usize,
    pub from: f64,
    pub to: f64,
    pub t0: f64,
    pub t1: f64,
}

/// Foot placements, ZMP reference and contact schedule of a walk.
#[derive(Debug, Clone)]
pub struct WalkTimeline {
    pub initial_x: Vec<f64>,
    pub swings: Vec<Swing>,
    pub zmp: PiecewiseLinear,
    pub schedule: ContactSchedule,
    pub lift: f64,
    pub ankle_z: f64,
    pub end: f64,
}

fn foot_center_offset(model: &PlanarModel, foot: usize) -> f64 {
    let pts = &model.feet[foot].points;
    pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64
}

fn support_center(model: &PlanarModel, foot_x: &[f64]) -> f64 {
    foot_x
        .iter()
        .enumerate()
        .map(|(f, x)| x + foot_center_offset(model, f))
        .sum::<f64>()
        / foot_x.len() as f64
}

impl WalkTimeline {
    pub fn new(model: &PlanarModel, plan: &WalkPlan) -> Result<Self, HarnessError> {
        if model.feet.len() != 2 || plan.foot_x.len() != 2 {
            return Err(HarnessError::Config("walking needs exactly two feet".into()));
        }
        let all = model.contact_ids();
        let mut feet_x = plan.foot_x.clone();
        let c0 = support_center(model, &feet_x);
        let mut knots = vec![(0.0, Vector2::new(c0, 0.0)), (plan.initial_stand, Vector2::new(c0, 0.0))];
        let mut phases = vec![(f64::NEG_INFINITY, all.clone())];
        let mut swings = Vec::new();
        let mut t = plan.initial_stand;
        for s in &plan.steps {
            let f = model
                .foot_index(&s.foot)
                .ok_or_else(|| HarnessError::Config(format!("unknown foot {}", s.foot)))?;
            let stance = 1 - f;
            let cs = feet_x[stance] + foot_center_offset(model, stance);
            let lift = t + plan.double_support;
            let land = lift + plan.single_support;
            knots.push((lift, Vector2::new(cs, 0.0)));
            knots.push((land, Vector2::new(cs, 0.0)));
            phases.push((lift, model.foot_contacts(stance)));
            phases.push((land, all.clone()));
            swings.push(Swing {
                foot: f,
                from: feet_x[f],
                to: s.x,
                t0: lift,
                t1: land,
            });
            feet_x[f] = s.x;
            t = land;
        }
        let cf = support_center(model, &feet_x);
        knots.push((t + plan.double_support, Vector2::new(cf, 0.0)));
        let end = t + plan.double_support + plan.final_stand;
        knots.push((end, Vector2::new(cf, 0.0)));
        Ok(Self {
            initial_x: plan.foot_x.clone(),
            swings,
            zmp: PiecewiseLinear::new(knots)?,
            schedule: ContactSchedule::new(phases),
            lift: plan.lift,
            ankle_z: model.ankle_height(),
            end,
        })
    }

    /// Planned `(x, z, angle)` of a foot frame.
    pub fn foot_pose(&self, foot: usize, t: f64) -> Vector3<f64> {
        let mut x = self.initial_x[foot];
        for s in self.swings.iter().filter(|s| s.foot == foot) {
            if t >= s.t1 {
                x = s.to;
            } else if t > s.t0 {
                let u = (t - s.t0) / (s.t1 - s.t0);
                let smooth = 0.5 * (1.0 - (std::f64::consts::PI * u).cos());
                let z = self.ankle_z + self.lift * (std::f64::consts::PI * u).sin().powi(2);
                return Vector3::new(s.from + (s.to - s.from) * smooth, z, 0.0);
            }
        }
        Vector3::new(x, self.ankle_z, 0.0)
    }
}

enum Plan {
    Balance {
        /// `(start time, setpoint, posture, value function)`
        segments: Vec<(f64, f64, DVector<f64>, QuadraticValueFunction)>,
    },
    Walk {
        timeline: WalkTimeline,
        vf: QuadraticValueFunction,
        base_z: f64,
    },
}

/// Per-step controller inputs handed to observers before the solve.
pub struct StepInput<'a> {
    pub step: usize,
    pub t: f64,
    pub snap: &'a DynamicsSnapshot,
    pub coeffs: &'a SurrogateCoeffs,
    pub qdd_des: &'a DVector<f64>,
    pub qp: &'a WholeBodyQp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub t: f64,
    pub iterations: usize,
    /// Symmetric difference between warm-start and final active sets.
    pub as_changes: usize,
    pub solve_us: f64,
    pub failover: bool,
    pub zmp_err: f64,
    pub com_err: f64,
    pub floating_residual: f64,
    pub cone_violation: f64,
    /// Largest excess of |τ| over its limit (0 when within limits).
    pub tau_violation: f64,
    pub kkt: f64,
    /// Per model contact; zero when inactive.
    pub forces: Vec<Vector3<f64>>,
    pub tau: Vec<f64>,
    /// One character per model contact: `1` when included in the QP.
    pub contacts: String,
    /// One character per inequality row: `1` active, `0` inactive.
    pub activity: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioTrace {
    pub scenario: String,
    pub solver: String,
    pub n_contacts: usize,
    pub n_tau: usize,
    pub steps: Vec<TraceStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub steps: usize,
    pub single_iteration_fraction: f64,
    pub histogram: BTreeMap<usize, usize>,
    pub mean_solve_us: f64,
    pub failovers: usize,
    pub max_zmp_err: f64,
    pub max_floating_residual: f64,
    pub max_cone_violation: f64,
    pub max_tau_violation: f64,
}

impl ScenarioTrace {
    pub fn histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for s in &self.steps {
            *h.entry(s.iterations).or_insert(0) += 1;
        }
        h
    }

    /// Steps solved by the first candidate without failover.
    pub fn single_iteration_fraction(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        let ones = self
            .steps
            .iter()
            .filter(|s| s.iterations == 1 && !s.failover)
            .count();
        ones as f64 / self.steps.len() as f64
    }

    pub fn multi_iteration_steps(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.iterations >= 2 || s.failover)
            .count()
    }

    pub fn failovers(&self) -> usize {
        self.steps.iter().filter(|s| s.failover).count()
    }

    pub fn summary(&self) -> TraceSummary {
        let n = self.steps.len();
        let fold = |f: fn(&TraceStep) -> f64| self.steps.iter().map(f).fold(0.0, f64::max);
        TraceSummary {
            steps: n,
            single_iteration_fraction: self.single_iteration_fraction(),
            histogram: self.histogram(),
            mean_solve_us: if n == 0 {
                0.0
            } else {
                self.steps.iter().map(|s| s.solve_us).sum::<f64>() / n as f64
            },
            failovers: self.failovers(),
            max_zmp_err: fold(|s| s.zmp_err),
            max_floating_residual: fold(|s| s.floating_residual),
            max_cone_violation: fold(|s| s.cone_violation),
            max_tau_violation: fold(|s| s.tau_violation),
        }
    }

    pub fn csv_header(&self, timing: bool) -> String {
        let mut h = String::from("step,t,iterations,as_changes,");
        if timing {
            h.push_str("solve_us,");
        }
        h.push_str("failover,zmp_err,com_err,floating_residual,cone_violation,tau_violation,kkt");
        for c in 0..self.n_contacts {
            let _ = write!(h, ",lambda{c}_x,lambda{c}_y,lambda{c}_z");
        }
        for j in 0..self.n_tau {
            let _ = write!(h, ",tau{j}");
        }
        h.push_str(",contacts,active");
        h
    }

    /// One row per control step. `timing = false` drops the wall-clock
    /// column, which makes the output reproducible byte for byte.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = self.csv_header(timing);
        out.push('\n');
        for (k, s) in self.steps.iter().enumerate() {
            let _ = write!(out, "{k},{},{},{},", s.t, s.iterations, s.as_changes);
            if timing {
                let _ = write!(out, "{},", s.solve_us);
            }
            let _ = write!(
                out,
                "{},{},{},{},{},{},{}",
                u8::from(s.failover),
                s.zmp_err,
                s.com_err,
                s.floating_residual,
                s.cone_violation,
                s.tau_violation,
                s.kkt
            );
            for f in &s.forces {
                let _ = write!(out, ",{},{},{}", f[0], f[1], f[2]);
            }
            for t in &s.tau {
                let _ = write!(out, ",{t}");
            }
            let _ = writeln!(out, ",{},{}", s.contacts, s.activity);
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("iterations,count\n");
        for (k, v) in self.histogram() {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }
}

impl TraceSummary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "steps: {}", self.steps);
        let _ = writeln!(s, "single_iteration_fraction: {:.4}", self.single_iteration_fraction);
        let _ = writeln!(s, "mean_solve_us: {:.2}", self.mean_solve_us);
        let _ = writeln!(s, "failovers: {}", self.failovers);
        let _ = writeln!(s, "max_zmp_err: {:.3e}", self.max_zmp_err);
        let _ = writeln!(s, "max_floating_residual: {:.3e}", self.max_floating_residual);
        let _ = writeln!(s, "max_cone_violation: {:.3e}", self.max_cone_violation);
        let _ = writeln!(s, "max_tau_violation: {:.3e}", self.max_tau_violation);
        let hist: Vec<String> = self.histogram.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        let _ = writeln!(s, "iteration_histogram: {}", hist.join(" "));
        s
    }
}

/// CSV and summary text for a trace.
pub fn report(trace: &ScenarioTrace) -> (String, String) {
    (trace.to_csv(true), trace.summary().to_text())
}

struct Controller {
    model: PlanarModel,
    zmodel: ComZmpModel,
    params: ControllerParams,
    plan: Plan,
    q_des: DVector<f64>,
    contact_tol: f64,
}

fn dump_qp(qp: &WholeBodyQp) -> String {
    format!("{}\n# rows\n{}", qp.qp.to_text(), qp.provenance_text())
}

impl Controller {
    fn new(sc: &Scenario, model: PlanarModel) -> Result<(Self, DVector<f64>), HarnessError> {
        let params = sc.controller_params(&model);
        let qy = Matrix2::new(sc.controller.qy[0], 0.0, 0.0, sc.controller.qy[1]);
        let (q0, plan, zmodel) = match sc.mode {
            Mode::Balance => {
                let b = sc.balance.as_ref().expect("validated");
                let center = support_center(&model, &b.foot_x);
                let mut shifts = vec![(f64::NEG_INFINITY, 0.0)];
                shifts.extend(b.shifts.iter().map(|s| (s[0], s[1])));
                let postures: Vec<DVector<f64>> = shifts
                    .iter()
                    .map(|(_, off)| model.standing_posture(&b.foot_x, b.base_z, center + off))
                    .collect::<Result<_, _>>()?;
                let zc = model.com(&postures[0])[1];
                let zmodel = ComZmpModel::constant_height(zc, model.gravity)?;
                let design = lqr_balance(&zmodel, &qy)?;
                let segments = shifts
                    .iter()
                    .zip(postures)
                    .map(|((t, off), p)| {
                        let k = Vector2::new(center + off, 0.0);
                        (*t, center + off, p, QuadraticValueFunction::balance(&zmodel, &qy, &design, k))
                    })
                    .collect::<Vec<_>>();
                (segments[0].2.clone(), Plan::Balance { segments }, zmodel)
            }
            Mode::Walk => {
                let w = sc.walk.as_ref().expect("validated");
                let timeline = WalkTimeline::new(&model, w)?;
                let c0 = support_center(&model, &w.foot_x);
                let q0 = model.standing_posture(&w.foot_x, w.base_z, c0)?;
                let zc = model.com(&q0)[1];
                let zmodel = ComZmpModel::constant_height(zc, model.gravity)?;
                let design: BalanceDesign = lqr_balance(&zmodel, &qy)?;
                let prob = TrackingProblem {
                    qy,
                    qf: design.s,
                    y_des: timeline.zmp.clone(),
                    t_final: sc.duration.max(timeline.end),
                };
                let mut vf = tvlqr(&zmodel, &prob, DEFAULT_RICCATI_DT)?;
                let x0 = Vector4::new(c0, 0.0, 0.0, 0.0);
                let nominal = nominal_com_traj(&vf, &zmodel, &x0)?;
                vf.set_nominal(nominal)?;
                (
                    q0,
                    Plan::Walk {
                        timeline,
                        vf,
                        base_z: w.base_z,
                    },
                    zmodel,
                )
            }
        };
        Ok((
            Self {
                model,
                zmodel,
                params,
                plan,
                q_des: q0.clone(),
                contact_tol: sc.controller.contact_tol,
            },
            q0,
        ))
    }

    fn value_function(&self, t: f64) -> &QuadraticValueFunction {
        match &self.plan {
            Plan::Balance { segments } => {
                let i = segments.partition_point(|s| s.0 <= t).max(1);
                &segments[i - 1].3
            }
            Plan::Walk { vf, .. } => vf,
        }
    }

    fn update_q_des(&mut self, t: f64, q: &DVector<f64>) -> Result<(), HarnessError> {
        match &self.plan {
            Plan::Balance { segments } => {
                let i = segments.partition_point(|s| s.0 <= t).max(1);
                self.q_des.copy_from(&segments[i - 1].2);
            }
            Plan::Walk {
                timeline,
                vf,
                base_z,
            } => {
                // planted feet keep their actual x
                let feet = (0..2)
                    .map(|f| {
                        let planted = timeline.swings.iter().all(|s| s.foot != f || t < s.t0 || t >= s.t1);
                        let mut pose = timeline.foot_pose(f, t);
                        if planted {
                            pose[0] = self.model.foot_pose(q, f)[0];
                        }
                        (f, pose)
                    })
                    .collect();
                let targets = IkTargets {
                    feet,
                    com_x: vf.x_des_at(t)[0],
                    base_z: *base_z,
                    base_pitch: 0.0,
                };
                self.q_des = self.model.inverse_kinematics(&self.q_des, &targets)?;
            }
        }
        Ok(())
    }

    fn active_contacts(&self, t: f64, q: &DVector<f64>) -> Vec<ContactId> {
        let scheduled: Vec<ContactId> = match &self.plan {
            Plan::Balance { .. } => self.model.contact_ids(),
            Plan::Walk { timeline, .. } => timeline.schedule.active_at(t).to_vec(),
        };
        scheduled
            .into_iter()
            .filter(|id| self.model.contact_position(q, *id)[1] <= self.contact_tol)
            .collect()
    }
}

struct Solved {
    sol: QpSolution,
    iterations: usize,
    failover: bool,
    elapsed_us: f64,
}

fn solve_with_failover(
    qp: &WholeBodyQp,
    warm: &ActiveSet,
    kind: SolverKind,
    cfg: &SolverConfig,
    ip: &InteriorPointConfig,
) -> Result<Solved, QpError> {
    let start = Instant::now();
    let mut failover = false;
    let (sol, iterations) = match kind {
        SolverKind::ActiveSet => {
            let ws = WarmStartState {
                active_set: warm.clone(),
            };
            let sol = active_set::solve(&qp.qp, &ws, cfg)?;
            if sol.status == QpStatus::Optimal {
                let it = sol.iterations;
                (sol, it)
            } else {
                failover = true;
                let it = sol.iterations;
                (interior_point_solve(&qp.qp, ip), it)
            }
        }
        SolverKind::InteriorPoint => {
            let sol = interior_point_solve(&qp.qp, ip);
            let it = sol.iterations;
            (sol, it)
        }
    };
    Ok(Solved {
        sol,
        iterations,
        failover,
        elapsed_us: start.elapsed().as_secs_f64() * 1e6,
    })
}

/// Runs a scenario, calling `observe` with every assembled QP before it is
/// solved. Returning `Break` stops the run early.
pub fn run_scenario_observed(
    sc: &Scenario,
    observe: &mut dyn FnMut(&StepInput) -> ControlFlow<()>,
) -> Result<ScenarioTrace, HarnessError> {
    sc.validate()?;
    let model = sc.load_model()?;
    let (mut ctl, mut q) = Controller::new(sc, model)?;
    let nq = ctl.model.nq();
    let mut qdot = DVector::zeros(nq);
    let cfg = sc.solver_config();
    let ip_cfg = InteriorPointConfig::default();
    let push = sc.push_impulse();
    let n_contacts = ctl.model.contact_ids().len();
    let na = nq - ctl.model.nf();
    let mut trace = ScenarioTrace {
        scenario: sc.name.clone(),
        solver: sc.solver.label().to_string(),
        n_contacts,
        n_tau: na,
        steps: Vec::with_capacity(sc.steps()),
    };
    let mut prev_tags: Vec<RowTag> = Vec::new();

    for step in 0..sc.steps() {
        let t = step as f64 * sc.dt;
        if let Some((k, dv)) = push {
            if k == step && ctl.model.floating {
                qdot[0] += dv;
            }
        }
        let active = ctl.active_contacts(t, &q);
        let snap = ctl.model.dynamics_snapshot(&q, &qdot, &active, ctl.params.n_d)?;
        let vf = ctl.value_function(t);
        let com = ctl.model.com(&q);
        let comdot = (&snap.j_com * &qdot)[0];
        let x = Vector4::new(com[0], 0.0, comdot, 0.0);
        let smp = vf.sample(t)?;
        let xbar = x - smp.x_des;
        let coeffs = surrogate_value(vf, t, &xbar)?;
        ctl.update_q_des(t, &q)?;
        let qdd_des = pd_desired_accel(&ctl.q_des, &q, &qdot, ctl.params.kp, ctl.params.kd);
        let wbqp = build_qp(&snap, &coeffs, &qdd_des, &ctl.params)?;
        let input = StepInput {
            step,
            t,
            snap: &snap,
            coeffs: &coeffs,
            qdd_des: &qdd_des,
            qp: &wbqp,
        };
        if observe(&input).is_break() {
            break;
        }

        let warm = wbqp.translate_active_set(&prev_tags);
        let solved = solve_with_failover(&wbqp, &warm, sc.solver, &cfg, &ip_cfg)?;
        if solved.sol.status != QpStatus::Optimal {
            return Err(HarnessError::Abort {
                step,
                t,
                reason: format!("{:?} after failover", solved.sol.status),
                dump: dump_qp(&wbqp),
            });
        }
        let sol = &solved.sol;
        prev_tags = wbqp.active_tags(&sol.active_set);

        let qdd = wbqp.qdd(&sol.z);
        let forces = wbqp.forces(&sol.z);
        let tau = recover_torques(&snap, &qdd, &forces)?;
        let u = snap.j_com.fixed_rows::<2>(0) * &qdd + snap.jdot_qdot_com;
        let y = zmp_output(&ctl.zmodel, &x, &Vector2::new(u[0], u[1]), t)?;
        let mut tau_violation: f64 = 0.0;
        for j in 0..na {
            tau_violation = tau_violation
                .max(tau[j] - ctl.params.tau_max[j])
                .max(ctl.params.tau_min[j] - tau[j]);
        }
        let cone = snap
            .contacts
            .iter()
            .zip(&forces)
            .map(|(c, f)| cone_violation(c, f))
            .fold(0.0, f64::max);
        let mut all_forces = vec![Vector3::zeros(); n_contacts];
        for (c, f) in snap.contacts.iter().zip(&forces) {
            all_forces[c.id] = *f;
        }
        let contacts: String = (0..n_contacts)
            .map(|i| if active.contains(&ContactId(i)) { '1' } else { '0' })
            .collect();
        let activity: String = (0..wbqp.qp.n_ineq())
            .map(|i| if sol.active_set.contains(i) { '1' } else { '0' })
            .collect();
        trace.steps.push(TraceStep {
            t,
            iterations: solved.iterations,
            as_changes: sol.active_set.changes_from(&warm),
            solve_us: solved.elapsed_us,
            failover: solved.failover,
            zmp_err: (y - smp.y_des).norm(),
            com_err: (com[0] - smp.x_des[0]).abs(),
            floating_residual: dynamics_residual(&snap, &qdd, None, &forces),
            cone_violation: cone,
            tau_violation: tau_violation.max(0.0),
            kkt: kkt_residual(&wbqp.qp, sol)?.max(),
            forces: all_forces,
            tau: tau.iter().copied().collect(),
            contacts,
            activity,
        });

        let qdd_applied = match sc.integration {
            IntegrationMode::Idealized => qdd,
            IntegrationMode::TorqueForward => {
                let clamped = DVector::from_fn(na, |j, _| {
                    tau[j].clamp(ctl.params.tau_min[j], ctl.params.tau_max[j])
                });
                let mut rhs = snap.generalized_force(&forces) - &snap.bias;
                let mut act = rhs.rows_mut(snap.nf, na);
                act += &snap.b_input * clamped;
                snap.h
                    .clone()
                    .cholesky()
                    .ok_or_else(|| HarnessError::Config("mass matrix not PD".into()))?
                    .solve(&rhs)
            }
        };
        (q, qdot) = integrate_step(&q, &qdot, &qdd_applied, sc.dt);
    }
    Ok(trace)
}

pub fn run_scenario(sc: &Scenario) -> Result<ScenarioTrace, HarnessError> {
    run_scenario_observed(sc, &mut |_| ControlFlow::Continue(()))
}

/// The QP assembled at control step `step`.
pub fn qp_at_step(sc: &Scenario, step: usize) -> Result<Option<WholeBodyQp>, HarnessError> {
    let mut found = None;
    run_scenario_observed(sc, &mut |inp| {
        if inp.step == step {
            found = Some(inp.qp.clone());
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })?;
    Ok(found)
}

#[derive(Debug, Clone)]
pub struct RecordedStep {
    pub snap: DynamicsSnapshot,
    pub coeffs: SurrogateCoeffs,
    pub qdd_des: DVector<f64>,
}

/// Inputs of every control step of one closed-loop run. QPs are rebuilt on
/// demand, so replays see bit-identical problems without storing them.
#[derive(Debug, Clone)]
pub struct RecordedSequence {
    pub params: ControllerParams,
    pub steps: Vec<RecordedStep>,
}

impl RecordedSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn qp(&self, i: usize) -> Result<WholeBodyQp, AssemblyError> {
        let s = &self.steps[i];
        build_qp(&s.snap, &s.coeffs, &s.qdd_des, &self.params)
    }
}

pub fn record_sequence(sc: &Scenario) -> Result<RecordedSequence, HarnessError> {
    let params = sc.controller_params(&sc.load_model()?);
    let mut steps = Vec::with_capacity(sc.steps());
    run_scenario_observed(sc, &mut |inp| {
        steps.push(RecordedStep {
            snap: inp.snap.clone(),
            coeffs: *inp.coeffs,
            qdd_des: inp.qdd_des.clone(),
        });
        ControlFlow::Continue(())
    })?;
    Ok(RecordedSequence { params, steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplaySolver {
    ActiveSetWarm,
    ActiveSetCold,
    InteriorPoint,
}

impl ReplaySolver {
    pub const ALL: [ReplaySolver; 3] = [Self::ActiveSetWarm, Self::ActiveSetCold, Self::InteriorPoint];

    pub fn label(&self) -> &'static str {
        match self {
            Self::ActiveSetWarm => "active-set-warm",
            Self::ActiveSetCold => "active-set-cold",
            Self::InteriorPoint => "interior-point",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub solver: ReplaySolver,
    pub steps: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub p99_us: f64,
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub failovers: usize,
}

/// Per-step replay result.
#[derive(Debug, Clone)]
pub struct ReplayStep {
    pub z: DVector<f64>,
    pub iterations: usize,
    pub failover: bool,
    pub elapsed_us: f64,
}

/// Solves every recorded QP with one solver policy, in order.
pub fn replay(
    seq: &RecordedSequence,
    solver: ReplaySolver,
    cfg: &SolverConfig,
    dense: bool,
) -> Result<Vec<ReplayStep>, HarnessError> {
    let ip = InteriorPointConfig::default();
    let mut prev: Vec<RowTag> = Vec::new();
    let mut out = Vec::with_capacity(seq.len());
    for i in 0..seq.len() {
        let mut qp = seq.qp(i)?;
        if dense {
            qp.qp = qp.qp.without_structure();
        }
        let (kind, warm) = match solver {
            ReplaySolver::ActiveSetWarm => (SolverKind::ActiveSet, qp.translate_active_set(&prev)),
            ReplaySolver::ActiveSetCold => (SolverKind::ActiveSet, ActiveSet::new()),
            ReplaySolver::InteriorPoint => (SolverKind::InteriorPoint, ActiveSet::new()),
        };
        let s = solve_with_failover(&qp, &warm, kind, cfg, &ip)?;
        prev = qp.active_tags(&s.sol.active_set);
        out.push(ReplayStep {
            z: s.sol.z,
            iterations: s.iterations,
            failover: s.failover,
            elapsed_us: s.elapsed_us,
        });
    }
    Ok(out)
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((p / 100.0) * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

pub fn bench_row(solver: ReplaySolver, steps: &[ReplayStep]) -> BenchRow {
    let n = steps.len();
    let mut times: Vec<f64> = steps.iter().map(|s| s.elapsed_us).collect();
    times.sort_by(f64::total_cmp);
    let nf = n.max(1) as f64;
    BenchRow {
        solver,
        steps: n,
        mean_us: times.iter().sum::<f64>() / nf,
        median_us: percentile(&times, 50.0),
        p99_us: percentile(&times, 99.0),
        mean_iterations: steps.iter().map(|s| s.iterations as f64).sum::<f64>() / nf,
        max_iterations: steps.iter().map(|s| s.iterations).max().unwrap_or(0),
        failovers: steps.iter().filter(|s| s.failover).count(),
    }
}

/// Records the scenario once and replays it through each solver policy.
/// Replays run one after another so timings do not compete for cores.
pub fn benchmark(sc: &Scenario) -> Result<Vec<BenchRow>, HarnessError> {
    let seq = record_sequence(sc)?;
    let cfg = sc.solver_config();
    ReplaySolver::ALL
        .iter()
        .map(|s| Ok(bench_row(*s, &replay(&seq, *s, &cfg, false)?)))
        .collect()
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out =
        String::from("solver,steps,mean_us,median_us,p99_us,mean_iterations,max_iterations,failovers\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.3},{:.3},{:.3},{:.4},{},{}",
            r.solver.label(),
            r.steps,
            r.mean_us,
            r.median_us,
            r.p99_us,
            r.mean_iterations,
            r.max_iterations,
            r.failovers
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrictionComparison {
    pub seeds: Vec<u64>,
    /// Multi-iteration step counts per seed.
    pub gv_multi: Vec<usize>,
    pub st_multi: Vec<usize>,
    pub gv_histogram: BTreeMap<usize, usize>,
    pub st_histogram: BTreeMap<usize, usize>,
    /// Ratio of summed Stewart–Trinkle to generating-vector counts.
    pub ratio: f64,
    /// 95% percentile-bootstrap interval of `ratio` over seeds.
    pub ci: (f64, f64),
}

impl FrictionComparison {
    pub fn gv_total(&self) -> usize {
        self.gv_multi.iter().sum()
    }

    pub fn st_total(&self) -> usize {
        self.st_multi.iter().sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seeds: {}", self.seeds.len());
        let _ = writeln!(
            s,
            "multi_iteration_steps generating-vectors: {} stewart-trinkle: {}",
            self.gv_total(),
            self.st_total()
        );
        let _ = writeln!(
            s,
            "ratio: {:.3} (95% CI {:.3} .. {:.3})",
            self.ratio, self.ci.0, self.ci.1
        );
        let fmt = |h: &BTreeMap<usize, usize>| {
            h.iter()
                .map(|(k, v)| format!("{k}:{v}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(s, "histogram generating-vectors: {}", fmt(&self.gv_histogram));
        let _ = writeln!(s, "histogram stewart-trinkle: {}", fmt(&self.st_histogram));
        let _ = writeln!(s, "seed,gv_multi,st_multi");
        for ((seed, g), t) in self.seeds.iter().zip(&self.gv_multi).zip(&self.st_multi) {
            let _ = writeln!(s, "{seed},{g},{t}");
        }
        s
    }
}

fn ratio_of_sums(a: &[usize], b: &[usize]) -> f64 {
    let (sa, sb) = (a.iter().sum::<usize>(), b.iter().sum::<usize>());
    if sb == 0 {
        if sa == 0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        sa as f64 / sb as f64
    }
}

/// Runs `sc` under both friction parameterizations for every seed.
pub fn compare_friction(sc: &Scenario, seeds: &[u64]) -> Result<FrictionComparison, HarnessError> {
    let jobs: Vec<(u64, FrictionParam)> = seeds
        .iter()
        .flat_map(|s| {
            [FrictionParam::GeneratingVectors, FrictionParam::StewartTrinkle]
                .into_iter()
                .map(move |f| (*s, f))
        })
        .collect();
    let traces = batch::map(&jobs, |(seed, fr)| {
        let mut s = sc.clone();
        s.seed = *seed;
        s.controller.friction = *fr;
        run_scenario(&s)
    });
    let mut gv_multi = Vec::new();
    let mut st_multi = Vec::new();
    let mut gv_histogram = BTreeMap::new();
    let mut st_histogram = BTreeMap::new();
    for ((_, fr), tr) in jobs.iter().zip(traces) {
        let tr = tr?;
        let (multi, hist) = match fr {
            FrictionParam::GeneratingVectors => (&mut gv_multi, &mut gv_histogram),
            FrictionParam::StewartTrinkle => (&mut st_multi, &mut st_histogram),
        };
        multi.push(tr.multi_iteration_steps());
        for (k, v) in tr.histogram() {
            *hist.entry(k).or_insert(0) += v;
        }
    }
    let ratio = ratio_of_sums(&st_multi, &gv_multi);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let n = seeds.len();
    let mut boots: Vec<f64> = (0..2000)
        .map(|_| {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let a: Vec<usize> = idx.iter().map(|&i| st_multi[i]).collect();
            let b: Vec<usize> = idx.iter().map(|&i| gv_multi[i]).collect();
            ratio_of_sums(&a, &b)
        })
        .collect();
    boots.sort_by(f64::total_cmp);
    let ci = (percentile(&boots, 2.5), percentile(&boots, 97.5));
    Ok(FrictionComparison {
        seeds: seeds.to_vec(),
        gv_multi,
        st_multi,
        gv_histogram,
        st_histogram,
        ratio,
        ci,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic() -> ScenarioTrace {
        let step = |t: f64, it: usize, fo: bool| TraceStep {
            t,
            iterations: it,
            as_changes: it - 1,
            solve_us: 10.0,
            failover: fo,
            zmp_err: 0.5,
            com_err: 0.25,
            floating_residual: 0.0,
            cone_violation: 0.0,
            tau_violation: 0.0,
            kkt: 1e-9,
            forces: vec![Vector3::new(1.0, 0.0, 2.0)],
            tau: vec![3.0, -4.0],
            contacts: "1".into(),
            activity: "01".into(),
        };
        ScenarioTrace {
            scenario: "syn".into(),
            solver: "active-set".into(),
            n_contacts: 1,
            n_tau: 2,
            steps: vec![step(0.0, 1, false), step(0.001, 2, false), step(0.002, 3, true)],
        }
    }

    #[test]
    fn empty_trace_is_header_only() {
        let tr = ScenarioTrace {
            n_contacts: 1,
            n_tau: 1,
            ..Default::default()
        };
        let csv = tr.to_csv(true);
        assert_eq!(csv.lines().count(), 1);
        assert_eq!(
            csv,
            "step,t,iterations,as_changes,solve_us,failover,zmp_err,com_err,floating_residual,\
             cone_violation,tau_violation,kkt,lambda0_x,lambda0_y,lambda0_z,tau0,contacts,active\n"
        );
    }

    #[test]
    fn synthetic_trace_csv_fixture() {
        let expected = "\
step,t,iterations,as_changes,solve_us,failover,zmp_err,com_err,floating_residual,cone_violation,tau_violation,kkt,lambda0_x,lambda0_y,lambda0_z,tau0,tau1,contacts,active
0,0,1,0,10,0,0.5,0.25,0,0,0,0.000000001,1,0,2,3,-4,1,01
1,0.001,2,1,10,0,0.5,0.25,0,0,0,0.000000001,1,0,2,3,-4,1,01
2,0.002,3,2,10,1,0.5,0.25,0,0,0,0.000000001,1,0,2,3,-4,1,01
";
        assert_eq!(synthetic().to_csv(true), expected);
    }

    #[test]
    fn summary_matches_histogram() {
        let tr = synthetic();
        let s = tr.summary();
        assert_eq!(s.failovers, 1);
        assert!((s.single_iteration_fraction - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.histogram.values().sum::<usize>(), 3);
        assert_eq!(tr.multi_iteration_steps(), 2);
    }

    #[test]
    fn builtin_scenarios_parse() {
        for (name, _) in BUILTIN_SCENARIOS {
            let sc = Scenario::builtin(name).unwrap();
            assert_eq!(&sc.name, name);
        }
        assert!(Scenario::from_toml("name = \"x\"\nduration = 1.0\n").is_err());
    }

    #[test]
    fn walk_timeline_shape() {
        let sc = Scenario::builtin("walk").unwrap();
        let model = sc.load_model().unwrap();
        let tl = WalkTimeline::new(&model, sc.walk.as_ref().unwrap()).unwrap();
        assert_eq!(tl.swings.len(), 4);
        assert!((tl.end - 5.9).abs() < 1e-12);
        // single support during the first swing: only the right foot
        assert_eq!(tl.schedule.active_at(1.5), model.foot_contacts(1).as_slice());
        assert_eq!(tl.schedule.active_at(0.5).len(), 4);
        let mid = tl.foot_pose(0, 1.6);
        assert!(mid[1] > tl.ankle_z && mid[0] > 0.0 && mid[0] < 0.15);
        assert_eq!(tl.foot_pose(0, 5.0)[0], 0.45);
    }

    #[test]
    fn bootstrap_ratio_degenerate() {
        assert_eq!(ratio_of_sums(&[0, 0], &[0, 0]), 1.0);
        assert_eq!(ratio_of_sums(&[3], &[2]), 1.5);
    }
}
