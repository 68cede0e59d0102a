//! Ground-truth and fallback solvers.
//!
//! [`brute_force_solve`] enumerates every trial active set and solves the
//! full equality-constrained KKT system densely (LU), independent of the
//! Schur-complement path in [`crate::active_set`]. [`interior_point_solve`]
//! is a Mehrotra predictor-corrector method used as failover and as a timing
//! baseline.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::qp_types::{inf_norm, ActiveSet, QpSolution, QpStatus, StandardQP};

/// Enumeration budget: at most 2^20 trial sets.
pub const MAX_ENUMERATED_ROWS: usize = 20;
/// Slack below which an interior-point row is reported as active.
pub const ACTIVITY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("enumeration budget exceeded: {0} inequality rows (max {MAX_ENUMERATED_ROWS})")]
    Budget(usize),
}

/// Dense solve of the KKT system for a fixed trial active set.
fn equality_kkt(qp: &StandardQP, act: &[usize]) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let (n, me) = (qp.n(), qp.n_eq());
    let k = me + act.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(qp.w());
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-qp.g()));
    for r in 0..me {
        for c in 0..n {
            kkt[(n + r, c)] = qp.a()[(r, c)];
            kkt[(c, n + r)] = qp.a()[(r, c)];
        }
        rhs[n + r] = qp.b()[r];
    }
    for (j, &i) in act.iter().enumerate() {
        let r = me + j;
        for c in 0..n {
            kkt[(n + r, c)] = qp.p()[(i, c)];
            kkt[(c, n + r)] = qp.p()[(i, c)];
        }
        rhs[n + r] = qp.f()[i];
    }
    let lu = kkt.clone().full_piv_lu();
    // rank check on the pivots: reject numerically singular trial sets
    let u = lu.u();
    let dmax = (0..n + k).fold(0.0_f64, |m, i| m.max(u[(i, i)].abs()));
    let dmin = (0..n + k).fold(f64::INFINITY, |m, i| m.min(u[(i, i)].abs()));
    if !(dmin > 1e-11 * dmax) {
        return None;
    }
    let x = lu.solve(&rhs)?;
    let z = x.rows(0, n).into_owned();
    let alpha = x.rows(n, me).into_owned();
    let gamma_act = x.rows(n + me, act.len()).into_owned();
    Some((z, alpha, gamma_act))
}

/// Global optimum by exhaustive active-set enumeration (`m_i ≤ 20`).
///
/// Trial sets are visited in order of increasing bitmask; the first one that
/// satisfies every KKT condition at `1e-9` is returned. For strictly convex
/// QPs that point is the unique optimum. If no trial set qualifies the
/// status is [`QpStatus::Infeasible`].
pub fn brute_force_solve(qp: &StandardQP) -> Result<QpSolution, ReferenceError> {
    let mi = qp.n_ineq();
    if mi > MAX_ENUMERATED_ROWS {
        return Err(ReferenceError::Budget(mi));
    }
    const TOL: f64 = 1e-9;
    let mut tried = 0usize;
    for mask in 0u32..(1u32 << mi) {
        let act: Vec<usize> = (0..mi).filter(|i| mask & (1 << i) != 0).collect();
        if act.len() + qp.n_eq() > qp.n() {
            continue;
        }
        tried += 1;
        let Some((z, alpha, gact)) = equality_kkt(qp, &act) else {
            continue;
        };
        if gact.iter().any(|&g| g < -TOL) {
            continue;
        }
        let slack = qp.slack_violation(&z);
        let scale = 1.0 + qp.f().amax();
        if slack.iter().any(|&s| s > TOL * scale) {
            continue;
        }
        let mut gamma = DVector::zeros(mi);
        for (j, &i) in act.iter().enumerate() {
            gamma[i] = gact[j];
        }
        return Ok(QpSolution {
            z,
            gamma,
            alpha_eq: alpha,
            active_set: ActiveSet::from_indices(act),
            iterations: tried,
            status: QpStatus::Optimal,
        });
    }
    Ok(QpSolution {
        z: DVector::zeros(qp.n()),
        gamma: DVector::zeros(mi),
        alpha_eq: DVector::zeros(qp.n_eq()),
        active_set: ActiveSet::new(),
        iterations: tried,
        status: QpStatus::Infeasible,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorPointConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub activity_tol: f64,
}

impl Default for InteriorPointConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            activity_tol: ACTIVITY_TOL,
        }
    }
}

/// Primal-dual path-following QP solve with Mehrotra centering.
///
/// Uses slacks `s = f - Pz ≥ 0`; the reduced Newton system
/// `[W + Pᵀ Σ P, Aᵀ; A, 0]` with `Σ = diag(γ/s)` is solved densely by LU.
/// Terminates when all residuals and the mean complementarity drop below
/// `tol` (scaled by the data magnitude); otherwise returns the last iterate
/// with `IterLimit`.
pub fn interior_point_solve(qp: &StandardQP, cfg: &InteriorPointConfig) -> QpSolution {
    let (n, me, mi) = (qp.n(), qp.n_eq(), qp.n_ineq());
    let (w, g, a, b, p, f) = (qp.w(), qp.g(), qp.a(), qp.b(), qp.p(), qp.f());

    let mut z = DVector::zeros(n);
    let mut alpha = DVector::zeros(me);
    let mut s = (f - p * &z).map(|v| v.max(1.0));
    let mut gam = DVector::from_element(mi, 1.0);

    let scale_d = 1.0 + g.amax().max(w.amax());
    let scale_p = 1.0 + b.amax().max(f.amax());

    let pt = p.transpose();
    let at = a.transpose();
    let mut iterations = 0;
    let mut converged = false;

    for it in 0..cfg.max_iter {
        iterations = it + 1;
        let r_d = w * &z + g + &at * &alpha + &pt * &gam;
        let r_e = a * &z - b;
        let r_i = p * &z + &s - f;
        let mu = if mi > 0 { s.dot(&gam) / mi as f64 } else { 0.0 };
        if inf_norm(&r_d) < cfg.tol * scale_d
            && inf_norm(&r_e) < cfg.tol * scale_p
            && inf_norm(&r_i) < cfg.tol * scale_p
            && mu < cfg.tol
        {
            converged = true;
            iterations = it;
            break;
        }

        let sigma_w = gam.component_div(&s);
        let mut h = w.clone();
        for i in 0..mi {
            let si = sigma_w[i];
            for c in 0..n {
                let pic = p[(i, c)];
                if pic == 0.0 {
                    continue;
                }
                let sp = si * pic;
                for r in 0..n {
                    h[(r, c)] += p[(i, r)] * sp;
                }
            }
        }
        let mut kkt = DMatrix::zeros(n + me, n + me);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        kkt.view_mut((0, n), (n, me)).copy_from(&at);
        kkt.view_mut((n, 0), (me, n)).copy_from(a);
        let lu = kkt.lu();

        // solve for given complementarity target rc (= s∘γ - σμ + corrections)
        let newton = |rc: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            let sinv_rc = rc.component_div(&s);
            let rhs_z = -&r_d - &pt * (sigma_w.component_mul(&r_i)) + &pt * &sinv_rc;
            let mut rhs = DVector::zeros(n + me);
            rhs.rows_mut(0, n).copy_from(&rhs_z);
            rhs.rows_mut(n, me).copy_from(&(-&r_e));
            let sol = lu.solve(&rhs)?;
            let dz = sol.rows(0, n).into_owned();
            let da = sol.rows(n, me).into_owned();
            let dg = sigma_w.component_mul(&(p * &dz + &r_i)) - &sinv_rc;
            // Γ ds + S dγ = -rc
            let ds = -(rc + s.component_mul(&dg)).component_div(&gam);
            Some((dz, da, dg, ds))
        };

        let rc_aff = s.component_mul(&gam);
        let Some((_, _, dg_a, ds_a)) = newton(&rc_aff) else {
            break;
        };
        let step_aff = max_step(&s, &ds_a).min(max_step(&gam, &dg_a));
        let mu_aff = if mi > 0 {
            (&s + &ds_a * step_aff).dot(&(&gam + &dg_a * step_aff)) / mi as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).clamp(0.0, 1.0) } else { 0.0 };
        let rc = &rc_aff + ds_a.component_mul(&dg_a) - DVector::from_element(mi, sigma * mu);
        let Some((dz, da, dg, ds)) = newton(&rc) else {
            break;
        };
        let step = if mi == 0 {
            1.0
        } else {
            (0.99 * max_step(&s, &ds).min(max_step(&gam, &dg))).min(1.0)
        };
        z += &dz * step;
        alpha += &da * step;
        gam += &dg * step;
        s += &ds * step;
    }

    let slack = f - p * &z;
    let active = ActiveSet::from_indices((0..mi).filter(|&i| slack[i] < cfg.activity_tol));
    QpSolution {
        z,
        gamma: gam,
        alpha_eq: alpha,
        active_set: active,
        iterations,
        status: if converged {
            QpStatus::Optimal
        } else {
            QpStatus::IterLimit
        },
    }
}

/// Largest step in (0, 1] keeping `v + t·dv ≥ 0`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter().zip(dv.iter()).fold(1.0_f64, |t, (&vi, &di)| {
        if di < 0.0 {
            t.min(-vi / di)
        } else {
            t
        }
    })
}

/// Random strictly convex QP that is feasible by construction: an interior
/// point is sampled first and the right-hand sides are shifted so it
/// satisfies every inequality strictly and every equality exactly.
pub fn random_feasible_qp<R: Rng>(rng: &mut R, n: usize, m_e: usize, m_i: usize) -> StandardQP {
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let w = &l * l.transpose() + DMatrix::identity(n, n) * 0.5;
    let w = (&w + w.transpose()) * 0.5;
    let g = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let z0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let a = DMatrix::from_fn(m_e, n, |_, _| rng.random_range(-1.0..1.0));
    let b = &a * &z0;
    let p = DMatrix::from_fn(m_i, n, |_, _| rng.random_range(-1.0..1.0));
    let margin = DVector::from_fn(m_i, |_, _| rng.random_range(0.05..1.0));
    let f = &p * &z0 + margin;
    StandardQP::new(w, g, a, b, p, f, None).expect("random QP is valid by construction")
}
