//! Convex-QP toolkit for whole-body walking control.
//!
//! The crate is organized bottom-up:
//!
//! * [`qp_types`]: standard-form QP, active sets, KKT residuals.
//! * [`active_set`]: warm-started active-set solver with structured `W⁻¹`.
//! * [`reference`]: enumeration oracle and interior-point fallback.
//! * [`zmp_lqr`]: COM/ZMP model, LQR/TVLQR value functions, surrogate cost.
//! * [`whole_body`]: whole-body QP assembly and torque recovery.
//! * [`toy_model`]: planar floating-base biped producing dynamics snapshots.
//! * [`harness`]: closed-loop scenarios, benchmarks, reporting.
//! * [`batch`]: data-parallel batch evaluation (rayon behind `parallel`).

pub mod active_set;
pub mod batch;
pub mod harness;
mod linalg;
pub mod qp_types;
pub mod reference;
pub mod toy_model;
pub mod whole_body;
pub mod zmp_lqr;

pub use active_set::{solve, SolverConfig, UpdateRule, WarmStartState};
pub use qp_types::{
    kkt_residual, validate_qp, ActiveSet, CostStructure, KktResidual, QpSolution, QpStatus,
    StandardQP,
};
