//! Warm-started primal active-set method.
//!
//! Each iteration assumes the current active set holds with equality, solves
//! the resulting equality-constrained KKT system through its Schur complement
//! in the multipliers,
//!
//! ```text
//! -(R W⁻¹ Rᵀ) [α; γ] = e + R W⁻¹ g,      z = -W⁻¹ (g + Rᵀ [α; γ]),
//! ```
//!
//! with `R = [A; P_act]` and `e = [b; f_act]`, and then checks primal
//! feasibility of the inactive rows and dual feasibility of the active ones.
//! `W⁻¹` is built once per solve; `W⁻¹ p_i` is cached per row so rows entering
//! the set in later iterations cost one application each.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2};

use crate::linalg::PivotedCholesky;
use crate::qp_types::{
    check_len, ActiveSet, CostStructure, QpError, QpSolution, QpStatus, StandardQP,
    DEFAULT_KKT_TOL,
};

/// How the active set is updated after a non-optimal candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateRule {
    /// Add every violated row and drop every negative multiplier at once.
    #[default]
    AllAtOnce,
    /// Add the most violated row, or if none is violated drop the most
    /// negative multiplier.
    OneAtATime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub iter_max: usize,
    pub kkt_tol: f64,
    pub singular_tol: f64,
    pub update_rule: UpdateRule,
    /// Iterative-refinement passes applied to each candidate.
    pub refine_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iter_max: 10,
            kkt_tol: DEFAULT_KKT_TOL,
            singular_tol: 1e-10,
            update_rule: UpdateRule::AllAtOnce,
            refine_steps: 2,
        }
    }
}

impl SolverConfig {
    pub fn is_valid(&self) -> bool {
        self.iter_max >= 1 && self.kkt_tol > 0.0 && self.singular_tol > 0.0
    }
}

/// Active set carried over from the previous control step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WarmStartState {
    pub active_set: ActiveSet,
}

impl WarmStartState {
    pub fn cold() -> Self {
        Self::default()
    }

    pub fn from_solution(sol: &QpSolution) -> Self {
        Self {
            active_set: sol.active_set.clone(),
        }
    }
}

/// `W⁻¹` as an operator, either from a dense factorization or from the
/// block/low-rank cost structure via the matrix inversion lemma.
#[derive(Debug, Clone)]
pub enum WInverse {
    Dense(Cholesky<f64, Dyn>),
    Structured(StructuredInverse),
}

#[derive(Debug, Clone)]
pub struct StructuredInverse {
    split: usize,
    inv_w: f64,
    u: DMatrix<f64>,
    /// `(Qy⁻¹ + UUᵀ/w)⁻¹`
    inner: Matrix2<f64>,
    inv_d22: DVector<f64>,
}

impl StructuredInverse {
    fn apply_into(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        let n1 = self.split;
        let v1 = v.rows(0, n1);
        let uv = &self.u * v1;
        let t = self.inner * nalgebra::Vector2::new(uv[0], uv[1]);
        let c = self.inv_w * self.inv_w;
        for j in 0..n1 {
            out[j] = self.inv_w * v[j] - c * (self.u[(0, j)] * t[0] + self.u[(1, j)] * t[1]);
        }
        for (k, d) in self.inv_d22.iter().enumerate() {
            out[n1 + k] = v[n1 + k] * d;
        }
    }
}

/// Builds the matrix-inversion-lemma inverse of a structured cost matrix:
/// `W11⁻¹ = I/w - Uᵀ (Qy⁻¹ + UUᵀ/w)⁻¹ U / w²`, `W22⁻¹ = diag(1/d22)`.
pub fn structured_w_inverse(s: &CostStructure) -> Result<WInverse, QpError> {
    check_len("U rows", 2, s.u.nrows())?;
    check_len("U cols", s.split, s.u.ncols())?;
    let qy_inv = s.qy.try_inverse().ok_or(QpError::Dimension {
        block: "Qy (singular)",
        expected: 2,
        got: 0,
    })?;
    let uut = &s.u * s.u.transpose();
    let m = qy_inv + Matrix2::new(uut[(0, 0)], uut[(0, 1)], uut[(1, 0)], uut[(1, 1)]) / s.w_qdd;
    let inner = m.try_inverse().ok_or(QpError::Dimension {
        block: "inner 2x2 (singular)",
        expected: 2,
        got: 0,
    })?;
    Ok(WInverse::Structured(StructuredInverse {
        split: s.split,
        inv_w: 1.0 / s.w_qdd,
        u: s.u.clone(),
        inner,
        inv_d22: s.d22.map(|d| 1.0 / d),
    }))
}

impl WInverse {
    /// Structured inverse when the QP carries a structure hint, dense
    /// Cholesky otherwise.
    pub fn for_qp(qp: &StandardQP) -> Option<Self> {
        match qp.structure() {
            Some(s) => structured_w_inverse(s).ok(),
            None => Cholesky::new(qp.w().clone()).map(WInverse::Dense),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            WInverse::Dense(ch) => ch.solve(v),
            WInverse::Structured(s) => {
                let mut out = DVector::zeros(v.len());
                s.apply_into(v, &mut out);
                out
            }
        }
    }

    pub fn apply_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for c in 0..m.ncols() {
            let col = self.apply(&m.column(c).into_owned());
            out.set_column(c, &col);
        }
        out
    }
}

/// Result of one equality-constrained KKT solve for a fixed active set.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub z: DVector<f64>,
    /// Multipliers of the active rows, in the order of `ActiveSet::indices`.
    pub gamma_active: DVector<f64>,
    pub alpha_eq: DVector<f64>,
}

impl Candidate {
    /// Full-length multiplier vector (zeros on inactive rows).
    pub fn gamma_full(&self, act: &ActiveSet, m_i: usize) -> DVector<f64> {
        let mut g = DVector::zeros(m_i);
        for (k, &i) in act.indices().iter().enumerate() {
            g[i] = self.gamma_active[k];
        }
        g
    }
}

/// Marker error: `R W⁻¹ Rᵀ` is singular at the configured pivot threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingularKkt;

/// Per-solve scratch: the `W⁻¹` operator and cached `W⁻¹ g`, `W⁻¹ aᵀ`, `W⁻¹ pᵀ`.
struct Workspace<'a> {
    qp: &'a StandardQP,
    winv: WInverse,
    winv_g: DVector<f64>,
    winv_a: Vec<DVector<f64>>,
    winv_p: Vec<Option<DVector<f64>>>,
    singular_tol: f64,
    refine_steps: usize,
}

impl<'a> Workspace<'a> {
    fn new(qp: &'a StandardQP, singular_tol: f64, refine_steps: usize) -> Option<Self> {
        let winv = WInverse::for_qp(qp)?;
        let winv_g = winv.apply(qp.g());
        let winv_a = (0..qp.n_eq())
            .map(|k| winv.apply(&qp.a().row(k).transpose()))
            .collect();
        Some(Self {
            qp,
            winv,
            winv_g,
            winv_a,
            winv_p: vec![None; qp.n_ineq()],
            singular_tol,
            refine_steps,
        })
    }

    fn ensure_rows(&mut self, act: &ActiveSet) {
        for &i in act.indices() {
            if self.winv_p[i].is_none() {
                let col = self.winv.apply(&self.qp.p().row(i).transpose());
                self.winv_p[i] = Some(col);
            }
        }
    }

    /// Largest subset of `order` (kept in that priority) whose rows, together
    /// with the equality rows, stay independent in the `W⁻¹` metric.
    fn independent_subset(&mut self, order: &[usize]) -> ActiveSet {
        let qp = self.qp;
        let mut basis: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
        let mut scale = 0.0f64;
        let mut keep = ActiveSet::new();
        let rows = (0..qp.n_eq()).map(|k| (None, qp.a().row(k).transpose(), self.winv_a[k].clone()));
        let ineq: Vec<_> = order
            .iter()
            .map(|&i| {
                let r = qp.p().row(i).transpose();
                let s = self.winv.apply(&r);
                (Some(i), r, s)
            })
            .collect();
        for (idx, mut r, mut s) in rows.collect::<Vec<_>>().into_iter().chain(ineq) {
            let norm0 = r.dot(&s);
            for (w, v) in &basis {
                let c = w.dot(&s);
                r.axpy(-c, w, 1.0);
                s.axpy(-c, v, 1.0);
            }
            let norm = r.dot(&s);
            scale = scale.max(norm0);
            if norm > self.singular_tol * scale.max(f64::MIN_POSITIVE) {
                let k = norm.sqrt();
                basis.push((r / k, s / k));
                if let Some(i) = idx {
                    keep.insert(i);
                }
            }
        }
        keep
    }

    /// Row `k` of `R` dotted with an n-vector.
    fn row_dot(&self, act: &ActiveSet, k: usize, v: &DVector<f64>) -> f64 {
        let me = self.qp.n_eq();
        if k < me {
            self.qp.a().row(k).transpose().dot(v)
        } else {
            self.qp.p().row(act.indices()[k - me]).transpose().dot(v)
        }
    }

    fn winv_row(&self, act: &ActiveSet, k: usize) -> &DVector<f64> {
        let me = self.qp.n_eq();
        if k < me {
            &self.winv_a[k]
        } else {
            self.winv_p[act.indices()[k - me]]
                .as_ref()
                .expect("row cached by ensure_rows")
        }
    }

    fn candidate(&mut self, act: &ActiveSet) -> Result<Candidate, SingularKkt> {
        self.ensure_rows(act);
        let qp = self.qp;
        let me = qp.n_eq();
        let nr = me + act.len();
        let n = qp.n();

        let mut m = DMatrix::zeros(nr, nr);
        for a in 0..nr {
            let wa = self.winv_row(act, a).clone();
            for b in a..nr {
                let v = self.row_dot(act, b, &wa);
                m[(a, b)] = v;
                m[(b, a)] = v;
            }
        }
        let e = DVector::from_iterator(
            nr,
            (0..nr).map(|k| {
                if k < me {
                    qp.b()[k]
                } else {
                    qp.f()[act.indices()[k - me]]
                }
            }),
        );

        let mut rhs = DVector::zeros(nr);
        for k in 0..nr {
            rhs[k] = -e[k] - self.row_dot(act, k, &self.winv_g);
        }
        let chol = if nr > 0 {
            Some(PivotedCholesky::new(&m, self.singular_tol).ok_or(SingularKkt)?)
        } else {
            None
        };
        let mut lam = match &chol {
            Some(c) => c.solve(&rhs),
            None => DVector::zeros(0),
        };
        let mut z = -&self.winv_g;
        for k in 0..nr {
            z.axpy(-lam[k], self.winv_row(act, k), 1.0);
        }

        // Iterative refinement on the full KKT residual with the same factors.
        for _ in 0..self.refine_steps {
            let mut r1 = qp.w() * &z + qp.g();
            for k in 0..nr {
                if k < me {
                    r1.axpy(lam[k], &qp.a().row(k).transpose(), 1.0);
                } else {
                    r1.axpy(lam[k], &qp.p().row(act.indices()[k - me]).transpose(), 1.0);
                }
            }
            let r2 = DVector::from_iterator(nr, (0..nr).map(|k| self.row_dot(act, k, &z) - e[k]));
            let scale = 1.0 + qp.w().amax() * z.amax() + qp.g().amax();
            if r1.amax().max(r2.amax()) <= 4.0 * f64::EPSILON * scale {
                break;
            }
            let winv_r1 = self.winv.apply(&r1);
            let mut dz = -winv_r1.clone();
            if let Some(c) = &chol {
                let rr = DVector::from_iterator(
                    nr,
                    (0..nr).map(|k| r2[k] - self.row_dot(act, k, &winv_r1)),
                );
                let dlam = c.solve(&rr);
                for k in 0..nr {
                    dz.axpy(-dlam[k], self.winv_row(act, k), 1.0);
                }
                lam += dlam;
            }
            z += dz;
        }
        debug_assert_eq!(z.len(), n);
        Ok(Candidate {
            z,
            alpha_eq: lam.rows(0, me).into_owned(),
            gamma_active: lam.rows(me, act.len()).into_owned(),
        })
    }
}

/// Solves the KKT system for the given active set (rows of the active set
/// hold with equality, inactive multipliers are zero).
pub fn candidate_solution(
    qp: &StandardQP,
    act: &ActiveSet,
    singular_tol: f64,
) -> Result<Candidate, SingularKkt> {
    let act = act.sanitized(qp.n_ineq());
    let mut ws = Workspace::new(qp, singular_tol, 2).ok_or(SingularKkt)?;
    ws.candidate(&act)
}

/// One active-set update. Returns `act` unchanged iff the candidate is
/// primal and dual feasible at `tol`.
pub fn update_active_set(
    qp: &StandardQP,
    act: &ActiveSet,
    cand: &Candidate,
    tol: f64,
    rule: UpdateRule,
) -> ActiveSet {
    let slack = qp.slack_violation(&cand.z);
    let violated = (0..qp.n_ineq()).filter(|&i| !act.contains(i) && slack[i] > tol);
    let negative = act
        .indices()
        .iter()
        .enumerate()
        .filter(|(k, _)| cand.gamma_active[*k] < -tol)
        .map(|(k, &i)| (i, cand.gamma_active[k]));
    match rule {
        UpdateRule::AllAtOnce => {
            let mut next = act.clone();
            let drop: Vec<usize> = negative.map(|(i, _)| i).collect();
            for i in drop {
                next.remove(i);
            }
            for i in violated {
                next.insert(i);
            }
            next
        }
        UpdateRule::OneAtATime => {
            let mut next = act.clone();
            if let Some(i) = violated.max_by(|&a, &b| slack[a].total_cmp(&slack[b])) {
                next.insert(i);
            } else if let Some((i, _)) = negative.min_by(|a, b| a.1.total_cmp(&b.1)) {
                next.remove(i);
            }
            next
        }
    }
}

/// Warm-started active-set solve.
///
/// Returns `Optimal`, `IterLimit` after `cfg.iter_max` candidate solves, or
/// `SingularKkt` when the Schur system stays singular after pruning the active
/// set once to an independent subset that favors the newest, most violated
/// rows.
pub fn solve(
    qp: &StandardQP,
    warm: &WarmStartState,
    cfg: &SolverConfig,
) -> Result<QpSolution, QpError> {
    check_len("W rows", qp.n(), qp.w().nrows())?;
    check_len("A cols", qp.n(), qp.a().ncols())?;
    check_len("P cols", qp.n(), qp.p().ncols())?;
    let (n, me, mi) = (qp.n(), qp.n_eq(), qp.n_ineq());

    let failed = |status, act: ActiveSet, iterations| QpSolution {
        z: DVector::zeros(n),
        gamma: DVector::zeros(mi),
        alpha_eq: DVector::zeros(me),
        active_set: act,
        iterations,
        status,
    };

    let Some(mut ws) = Workspace::new(qp, cfg.singular_tol, cfg.refine_steps) else {
        return Ok(failed(QpStatus::SingularKkt, ActiveSet::new(), 0));
    };
    let mut act = warm.active_set.sanitized(mi);
    // insertion order, newest last
    let mut recent: Vec<usize> = act.indices().to_vec();
    let mut retried = false;

    for iter in 1..=cfg.iter_max {
        let cand = match ws.candidate(&act) {
            Ok(c) => c,
            Err(SingularKkt) => {
                if retried {
                    return Ok(failed(QpStatus::SingularKkt, act, iter));
                }
                retried = true;
                let order: Vec<usize> = recent.iter().rev().copied().collect();
                act = ws.independent_subset(&order);
                recent.retain(|i| act.contains(*i));
                continue;
            }
        };
        retried = false;
        let next = update_active_set(qp, &act, &cand, cfg.kkt_tol, cfg.update_rule);
        if next == act {
            return Ok(QpSolution {
                gamma: cand.gamma_full(&act, mi),
                z: cand.z,
                alpha_eq: cand.alpha_eq,
                active_set: act,
                iterations: iter,
                status: QpStatus::Optimal,
            });
        }
        recent.retain(|i| next.contains(*i));
        let slack = qp.slack_violation(&cand.z);
        let mut added: Vec<usize> = next.indices().iter().copied().filter(|i| !act.contains(*i)).collect();
        added.sort_by(|&a, &b| slack[a].total_cmp(&slack[b]));
        recent.extend(added);
        if iter == cfg.iter_max {
            return Ok(QpSolution {
                gamma: cand.gamma_full(&act, mi),
                z: cand.z,
                alpha_eq: cand.alpha_eq,
                active_set: next,
                iterations: iter,
                status: QpStatus::IterLimit,
            });
        }
        act = next;
    }
    Ok(failed(QpStatus::IterLimit, act, cfg.iter_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp_types::kkt_residual;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_qp() -> StandardQP {
        StandardQP::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, -1.0),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 0.0),
            None,
        )
        .unwrap()
    }

    fn random_structure(rng: &mut ChaCha8Rng, n1: usize, n2: usize) -> CostStructure {
        let u = DMatrix::from_fn(2, n1, |_, _| rng.random_range(-1.0..1.0));
        let l = Matrix2::new(
            rng.random_range(0.5..1.5),
            0.0,
            rng.random_range(-0.5..0.5),
            rng.random_range(0.5..1.5),
        );
        CostStructure {
            split: n1,
            w_qdd: rng.random_range(0.1..2.0),
            u,
            qy: l * l.transpose(),
            d22: DVector::from_fn(n2, |_, _| rng.random_range(0.1..3.0)),
        }
    }

    #[test]
    fn unconstrained_identity_one_iteration() {
        let qp = StandardQP::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let s = solve(&qp, &WarmStartState::cold(), &SolverConfig::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_eq!(s.iterations, 1);
        assert_eq!(s.z, DVector::zeros(2));
    }

    #[test]
    fn scalar_qp_two_iterations() {
        let qp = scalar_qp();
        let s = solve(&qp, &WarmStartState::cold(), &SolverConfig::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_eq!(s.iterations, 2);
        assert_eq!(s.z[0], 0.0);
        assert_eq!(s.gamma[0], 1.0);
        assert_eq!(s.active_set.indices(), &[0]);
    }

    #[test]
    fn scalar_qp_iter_limit_one() {
        let cfg = SolverConfig {
            iter_max: 1,
            ..Default::default()
        };
        let s = solve(&scalar_qp(), &WarmStartState::cold(), &cfg).unwrap();
        assert_eq!(s.status, QpStatus::IterLimit);
        assert_eq!(s.iterations, 1);
    }

    #[test]
    fn candidate_empty_set_is_unconstrained_minimizer() {
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = DVector::from_vec(vec![1.0, -1.0]);
        let qp = StandardQP::unconstrained(w.clone(), g.clone()).unwrap();
        let c = candidate_solution(&qp, &ActiveSet::new(), 1e-10).unwrap();
        let expected = -w.try_inverse().unwrap() * g;
        assert!((c.z - expected).amax() < 1e-14);
    }

    #[test]
    fn candidate_min_norm_point_on_line() {
        let qp = StandardQP::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_element(1, 1.0),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            None,
        )
        .unwrap();
        let c = candidate_solution(&qp, &ActiveSet::new(), 1e-10).unwrap();
        assert!((c.alpha_eq[0] + 1.0).abs() < 1e-15);
        assert!((c.z[0] - 1.0).abs() < 1e-15 && c.z[1].abs() < 1e-15);
    }

    #[test]
    fn candidate_detects_duplicate_rows() {
        let qp = StandardQP::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-1.0, -1.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            DVector::from_vec(vec![0.0, 0.0]),
            None,
        )
        .unwrap();
        let act = ActiveSet::from_indices([0, 1]);
        assert_eq!(candidate_solution(&qp, &act, 1e-10).unwrap_err(), SingularKkt);
        // warm start with both duplicates: dropping the newest recovers
        let s = solve(
            &qp,
            &WarmStartState { active_set: act },
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(kkt_residual(&qp, &s).unwrap().all_below(1e-10));
        assert!((s.z[0] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn structured_zero_u_collapses() {
        let s = CostStructure {
            split: 3,
            w_qdd: 4.0,
            u: DMatrix::zeros(2, 3),
            qy: Matrix2::identity(),
            d22: DVector::from_vec(vec![2.0, 5.0]),
        };
        let inv = structured_w_inverse(&s).unwrap();
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let out = inv.apply(&v);
        let expected = DVector::from_vec(vec![0.25, 0.5, 0.75, 2.0, 1.0]);
        assert!((out - expected).amax() < 1e-15);
    }

    #[test]
    fn structured_rank_two_identity_perturbation() {
        let n1 = 5;
        let mut u = DMatrix::zeros(2, n1);
        u[(0, 0)] = 1.0;
        u[(1, 1)] = 1.0;
        let s = CostStructure {
            split: n1,
            w_qdd: 1.0,
            u,
            qy: Matrix2::identity(),
            d22: DVector::zeros(0),
        };
        let m = structured_w_inverse(&s)
            .unwrap()
            .apply_mat(&DMatrix::identity(n1, n1));
        let expected =
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5, 1.0, 1.0, 1.0]));
        assert!((m - expected).amax() < 1e-15);
    }

    #[test]
    fn structured_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let s = random_structure(&mut rng, 20, 6);
            let dense_inv = s.materialize().try_inverse().unwrap();
            let v = DVector::from_fn(26, |_, _| rng.random_range(-1.0..1.0));
            let a = structured_w_inverse(&s).unwrap().apply(&v);
            let b = &dense_inv * &v;
            assert!((a - &b).amax() <= 1e-10 * b.amax());
        }
    }

    #[test]
    fn update_rules() {
        // three rows z_k <= 0 on a 3-var QP
        let qp = StandardQP::new(
            DMatrix::identity(3, 3),
            DVector::from_vec(vec![-1.0, -2.0, 1.0]),
            DMatrix::zeros(0, 3),
            DVector::zeros(0),
            DMatrix::identity(3, 3),
            DVector::zeros(3),
            None,
        )
        .unwrap();
        let cfg = SolverConfig::default();
        let optimal = solve(&qp, &WarmStartState::cold(), &cfg).unwrap();
        assert_eq!(optimal.active_set.indices(), &[0, 1]);
        let c = candidate_solution(&qp, &optimal.active_set, 1e-10).unwrap();
        let same = update_active_set(&qp, &optimal.active_set, &c, 1e-8, UpdateRule::AllAtOnce);
        assert_eq!(same, optimal.active_set);

        let only0 = ActiveSet::from_indices([0]);
        let c = candidate_solution(&qp, &only0, 1e-10).unwrap();
        let next = update_active_set(&qp, &only0, &c, 1e-8, UpdateRule::AllAtOnce);
        assert_eq!(next.indices(), &[0, 1]);

        let with2 = ActiveSet::from_indices([0, 1, 2]);
        let c = candidate_solution(&qp, &with2, 1e-10).unwrap();
        let next = update_active_set(&qp, &with2, &c, 1e-8, UpdateRule::AllAtOnce);
        assert_eq!(next.indices(), &[0, 1]);
    }

    #[test]
    fn one_at_a_time_picks_most_violated() {
        let qp = StandardQP::new(
            DMatrix::identity(3, 3),
            DVector::from_vec(vec![-1.0, -2.0, 1.0]),
            DMatrix::zeros(0, 3),
            DVector::zeros(0),
            DMatrix::identity(3, 3),
            DVector::zeros(3),
            None,
        )
        .unwrap();
        let c = candidate_solution(&qp, &ActiveSet::new(), 1e-10).unwrap();
        let next = update_active_set(&qp, &ActiveSet::new(), &c, 1e-8, UpdateRule::OneAtATime);
        assert_eq!(next.indices(), &[1]);
        let cfg = SolverConfig {
            update_rule: UpdateRule::OneAtATime,
            ..Default::default()
        };
        let s = solve(&qp, &WarmStartState::cold(), &cfg).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_eq!(s.iterations, 3);
    }

    #[test]
    fn warm_start_drops_out_of_range() {
        let qp = scalar_qp();
        let warm = WarmStartState {
            active_set: ActiveSet::from_indices([0, 7]),
        };
        let s = solve(&qp, &warm, &SolverConfig::default()).unwrap();
        assert_eq!(s.iterations, 1);
        assert_eq!(s.status, QpStatus::Optimal);
    }
}
