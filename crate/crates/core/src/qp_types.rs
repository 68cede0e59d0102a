//! Standard-form convex QP shared by every solver in the crate.
//!
//! ```text
//! minimize    ½ zᵀ W z + gᵀ z
//! subject to  A z  = b
//!             P z ≤ f
//! ```
//!
//! Indices are 0-based. Equality multipliers are called `alpha_eq` and
//! inequality multipliers `gamma`; stationarity reads
//! `W z + g + Aᵀ alpha_eq + Pᵀ gamma = 0`.

use std::fmt;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix2};
use thiserror::Error;

/// Symmetry tolerance, relative to the largest entry of `W`.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Default absolute tolerance for KKT checks.
pub const DEFAULT_KKT_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch in {block}: expected {expected}, got {got}")]
    Dimension {
        block: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid QP: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// One failed invariant of a [`StandardQP`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape {
        block: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    Asymmetric { max_abs_diff: f64 },
    NotPositiveDefinite { min_eigenvalue: f64 },
    NonFinite { block: &'static str },
    StructureMismatch { max_abs_diff: f64 },
    BadStructure { what: &'static str, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape {
                block,
                expected,
                got,
            } => write!(
                f,
                "{block} has shape {}x{}, expected {}x{}",
                got.0, got.1, expected.0, expected.1
            ),
            Violation::Asymmetric { max_abs_diff } => {
                write!(f, "W is not symmetric (max |W - Wᵀ| = {max_abs_diff:e})")
            }
            Violation::NotPositiveDefinite { min_eigenvalue } => {
                write!(f, "W is not positive definite (min eigenvalue {min_eigenvalue:e})")
            }
            Violation::NonFinite { block } => write!(f, "{block} has non-finite entries"),
            Violation::StructureMismatch { max_abs_diff } => write!(
                f,
                "cost structure does not reproduce W (max diff {max_abs_diff:e})"
            ),
            Violation::BadStructure { what, value } => {
                write!(f, "cost structure {what} invalid ({value:e})")
            }
        }
    }
}

/// Block/low-rank description of the cost matrix:
/// `W = blkdiag(w_qdd·I + Uᵀ Qy U, diag(d22))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostStructure {
    pub split: usize,
    pub w_qdd: f64,
    /// 2 × split.
    pub u: DMatrix<f64>,
    pub qy: Matrix2<f64>,
    pub d22: DVector<f64>,
}

impl CostStructure {
    pub fn dim(&self) -> usize {
        self.split + self.d22.len()
    }

    /// Dense `W` described by this structure.
    pub fn materialize(&self) -> DMatrix<f64> {
        let n = self.dim();
        let n1 = self.split;
        let mut w = DMatrix::zeros(n, n);
        let qy = DMatrix::from_column_slice(2, 2, self.qy.as_slice());
        let w11 = self.u.transpose() * qy * &self.u;
        w.view_mut((0, 0), (n1, n1)).copy_from(&w11);
        for i in 0..n1 {
            w[(i, i)] += self.w_qdd;
        }
        for (k, d) in self.d22.iter().enumerate() {
            w[(n1 + k, n1 + k)] = *d;
        }
        w
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.u.nrows() != 2 || self.u.ncols() != self.split {
            out.push(Violation::Shape {
                block: "U",
                expected: (2, self.split),
                got: self.u.shape(),
            });
        }
        if !(self.w_qdd > 0.0) {
            out.push(Violation::BadStructure {
                what: "w_qdd",
                value: self.w_qdd,
            });
        }
        if let Some(d) = self.d22.iter().copied().find(|d| !(*d > 0.0)) {
            out.push(Violation::BadStructure {
                what: "d22 entry",
                value: d,
            });
        }
        let asym = (self.qy[(0, 1)] - self.qy[(1, 0)]).abs();
        let det = self.qy[(0, 0)] * self.qy[(1, 1)] - self.qy[(0, 1)] * self.qy[(1, 0)];
        if asym > SYMMETRY_TOL * self.qy.amax().max(1.0) || !(self.qy[(0, 0)] > 0.0) || !(det > 0.0)
        {
            out.push(Violation::BadStructure {
                what: "Qy (not SPD)",
                value: det,
            });
        }
        out
    }
}

/// Strictly increasing set of inequality-row indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ActiveSet {
    indices: Vec<usize>,
}

impl ActiveSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from arbitrary indices, sorting and deduplicating.
    pub fn from_indices<I: IntoIterator<Item = usize>>(it: I) -> Self {
        let mut indices: Vec<usize> = it.into_iter().collect();
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Returns true if `i` was not already present.
    pub fn insert(&mut self, i: usize) -> bool {
        match self.indices.binary_search(&i) {
            Ok(_) => false,
            Err(pos) => {
                self.indices.insert(pos, i);
                true
            }
        }
    }

    pub fn remove(&mut self, i: usize) -> bool {
        match self.indices.binary_search(&i) {
            Ok(pos) => {
                self.indices.remove(pos);
                true
            }
            Err(_) => false,
        }
    }

    /// Drops indices outside `[0, m_i)`.
    pub fn sanitized(&self, m_i: usize) -> Self {
        Self {
            indices: self.indices.iter().copied().filter(|&i| i < m_i).collect(),
        }
    }

    /// Size of the symmetric difference.
    pub fn changes_from(&self, other: &ActiveSet) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        let (a, b) = (&self.indices, &other.indices);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Equal => {
                    i += 1;
                    j += 1;
                }
                std::cmp::Ordering::Less => {
                    n += 1;
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    n += 1;
                    j += 1;
                }
            }
        }
        n + (a.len() - i) + (b.len() - j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Optimal,
    IterLimit,
    SingularKkt,
    /// No trial active set produced a KKT point (enumeration oracle only).
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub gamma: DVector<f64>,
    pub alpha_eq: DVector<f64>,
    pub active_set: ActiveSet,
    pub iterations: usize,
    pub status: QpStatus,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_ineq: f64,
    pub complementarity: f64,
    pub dual_feas: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_ineq)
            .max(self.complementarity)
            .max(self.dual_feas)
    }

    pub fn all_below(&self, tol: f64) -> bool {
        self.max() < tol
    }
}

/// Standard-form QP. Construct with [`StandardQP::new`] to get the
/// invariants checked; [`StandardQP::from_parts_unchecked`] skips them.
#[derive(Debug, Clone)]
pub struct StandardQP {
    w: DMatrix<f64>,
    g: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    p: DMatrix<f64>,
    f: DVector<f64>,
    structure: Option<CostStructure>,
}

impl StandardQP {
    pub fn new(
        w: DMatrix<f64>,
        g: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        p: DMatrix<f64>,
        f: DVector<f64>,
        structure: Option<CostStructure>,
    ) -> Result<Self, QpError> {
        let qp = Self::from_parts_unchecked(w, g, a, b, p, f, structure);
        let violations = validate_qp(&qp);
        if violations.is_empty() {
            Ok(qp)
        } else {
            Err(QpError::Invalid(violations))
        }
    }

    pub fn from_parts_unchecked(
        w: DMatrix<f64>,
        g: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        p: DMatrix<f64>,
        f: DVector<f64>,
        structure: Option<CostStructure>,
    ) -> Self {
        Self {
            w,
            g,
            a,
            b,
            p,
            f,
            structure,
        }
    }

    /// Builds the QP from a cost structure; `W` is materialized from it.
    pub fn from_structure(
        structure: CostStructure,
        g: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        p: DMatrix<f64>,
        f: DVector<f64>,
    ) -> Result<Self, QpError> {
        let w = structure.materialize();
        Self::new(w, g, a, b, p, f, Some(structure))
    }

    /// Unconstrained QP with only a cost.
    pub fn unconstrained(w: DMatrix<f64>, g: DVector<f64>) -> Result<Self, QpError> {
        let n = g.len();
        Self::new(
            w,
            g,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            None,
        )
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }
    pub fn n_eq(&self) -> usize {
        self.b.len()
    }
    pub fn n_ineq(&self) -> usize {
        self.f.len()
    }
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    pub fn g(&self) -> &DVector<f64> {
        &self.g
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }
    pub fn f(&self) -> &DVector<f64> {
        &self.f
    }
    pub fn structure(&self) -> Option<&CostStructure> {
        self.structure.as_ref()
    }

    /// Same problem with the structure hint removed (dense solves only).
    pub fn without_structure(&self) -> Self {
        Self {
            structure: None,
            ..self.clone()
        }
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.w * z)) + self.g.dot(z)
    }

    /// `p_iᵀ z - f_i` for every inequality row.
    pub fn slack_violation(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.p * z - &self.f
    }

    /// Serializes to the plain-text dump format (see [`StandardQP::from_text`]).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "standard_qp {} {} {}", self.n(), self.n_eq(), self.n_ineq());
        write_matrix(&mut s, "W", &self.w);
        write_vector(&mut s, "g", &self.g);
        write_matrix(&mut s, "A", &self.a);
        write_vector(&mut s, "b", &self.b);
        write_matrix(&mut s, "P", &self.p);
        write_vector(&mut s, "f", &self.f);
        match &self.structure {
            None => s.push_str("structure none\n"),
            Some(cs) => {
                let _ = writeln!(s, "structure {} {:?}", cs.split, cs.w_qdd);
                write_matrix(&mut s, "U", &cs.u);
                let qy = DMatrix::from_column_slice(2, 2, cs.qy.as_slice());
                write_matrix(&mut s, "Qy", &qy);
                write_vector(&mut s, "d22", &cs.d22);
            }
        }
        s
    }

    /// Parses the format written by [`StandardQP::to_text`]. The result is
    /// not validated; call [`validate_qp`] if needed.
    pub fn from_text(text: &str) -> Result<Self, QpError> {
        let mut rd = TextReader::new(text);
        let header = rd.words("standard_qp")?;
        let [n, me, mi] = rd.dims::<3>(&header)?;
        let w = rd.matrix("W", n, n)?;
        let g = rd.vector("g", n)?;
        let a = rd.matrix("A", me, n)?;
        let b = rd.vector("b", me)?;
        let p = rd.matrix("P", mi, n)?;
        let f = rd.vector("f", mi)?;
        let st = rd.words("structure")?;
        let structure = if st.first().map(String::as_str) == Some("none") {
            None
        } else {
            if st.len() != 2 {
                return Err(rd.err("structure header needs split and w_qdd"));
            }
            let split: usize = st[0].parse().map_err(|_| rd.err("bad split"))?;
            let w_qdd: f64 = st[1].parse().map_err(|_| rd.err("bad w_qdd"))?;
            let u = rd.matrix("U", 2, split)?;
            let qy = rd.matrix("Qy", 2, 2)?;
            let d22 = rd.vector("d22", n.saturating_sub(split))?;
            Some(CostStructure {
                split,
                w_qdd,
                u,
                qy: Matrix2::from_column_slice(qy.as_slice()),
                d22,
            })
        };
        Ok(Self::from_parts_unchecked(w, g, a, b, p, f, structure))
    }
}

fn write_matrix(s: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(s, "{name} {} {}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:?}", m[(r, c)])).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
}

fn write_vector(s: &mut String, name: &str, v: &DVector<f64>) {
    let _ = writeln!(s, "{name} {}", v.len());
    let row: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    let _ = writeln!(s, "{}", row.join(" "));
}

struct TextReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> TextReader<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
            line: 0,
        }
    }

    fn err(&self, msg: &str) -> QpError {
        QpError::Parse {
            line: self.line,
            msg: msg.to_string(),
        }
    }

    fn next_line(&mut self) -> Result<&'a str, QpError> {
        for (i, l) in self.lines.by_ref() {
            self.line = i + 1;
            if !l.trim().is_empty() {
                return Ok(l);
            }
        }
        Err(self.err("unexpected end of input"))
    }

    /// Reads a header line starting with `tag`, returning the remaining words.
    fn words(&mut self, tag: &str) -> Result<Vec<String>, QpError> {
        let l = self.next_line()?;
        let mut it = l.split_whitespace();
        if it.next() != Some(tag) {
            return Err(self.err(&format!("expected `{tag}`")));
        }
        Ok(it.map(str::to_string).collect())
    }

    fn dims<const K: usize>(&self, words: &[String]) -> Result<[usize; K], QpError> {
        if words.len() != K {
            return Err(self.err("wrong number of dimensions"));
        }
        let mut out = [0; K];
        for (o, w) in out.iter_mut().zip(words) {
            *o = w.parse().map_err(|_| self.err("bad dimension"))?;
        }
        Ok(out)
    }

    fn numbers(&mut self, count: usize) -> Result<Vec<f64>, QpError> {
        if count == 0 {
            // empty rows are written as blank lines, which next_line skips
            return Ok(Vec::new());
        }
        let l = self.next_line()?;
        let vals: Result<Vec<f64>, _> = l.split_whitespace().map(str::parse).collect();
        let vals = vals.map_err(|_| self.err("bad number"))?;
        if vals.len() != count {
            return Err(self.err(&format!("expected {count} entries, got {}", vals.len())));
        }
        Ok(vals)
    }

    fn matrix(&mut self, tag: &str, r: usize, c: usize) -> Result<DMatrix<f64>, QpError> {
        let w = self.words(tag)?;
        let [rr, cc] = self.dims::<2>(&w)?;
        if rr != r || cc != c {
            return Err(self.err(&format!("{tag} is {rr}x{cc}, expected {r}x{c}")));
        }
        let mut m = DMatrix::zeros(r, c);
        if c == 0 {
            return Ok(m);
        }
        for i in 0..r {
            let row = self.numbers(c)?;
            for (j, v) in row.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    fn vector(&mut self, tag: &str, n: usize) -> Result<DVector<f64>, QpError> {
        let w = self.words(tag)?;
        let [nn] = self.dims::<1>(&w)?;
        if nn != n {
            return Err(self.err(&format!("{tag} has {nn} entries, expected {n}")));
        }
        Ok(DVector::from_vec(self.numbers(n)?))
    }
}

/// Lists every violated invariant; empty iff the QP is well formed.
pub fn validate_qp(qp: &StandardQP) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = qp.g.len();
    let shape_checks: [(&'static str, (usize, usize), (usize, usize)); 5] = [
        ("W", (n, n), qp.w.shape()),
        ("A", (qp.b.len(), n), qp.a.shape()),
        ("P", (qp.f.len(), n), qp.p.shape()),
        ("b", (qp.a.nrows(), 1), (qp.b.len(), 1)),
        ("f", (qp.p.nrows(), 1), (qp.f.len(), 1)),
    ];
    for (block, expected, got) in shape_checks {
        if expected != got {
            out.push(Violation::Shape {
                block,
                expected,
                got,
            });
        }
    }
    let finite: [(&'static str, bool); 6] = [
        ("W", qp.w.iter().all(|x| x.is_finite())),
        ("g", qp.g.iter().all(|x| x.is_finite())),
        ("A", qp.a.iter().all(|x| x.is_finite())),
        ("b", qp.b.iter().all(|x| x.is_finite())),
        ("P", qp.p.iter().all(|x| x.is_finite())),
        ("f", qp.f.iter().all(|x| x.is_finite())),
    ];
    for (block, ok) in finite {
        if !ok {
            out.push(Violation::NonFinite { block });
        }
    }
    if !out.is_empty() {
        return out;
    }

    let asym = (&qp.w - qp.w.transpose()).amax();
    if asym > SYMMETRY_TOL * qp.w.amax().max(1.0) {
        out.push(Violation::Asymmetric { max_abs_diff: asym });
    }
    if n > 0 {
        let sym = (&qp.w + qp.w.transpose()) * 0.5;
        let min_eig = sym.symmetric_eigenvalues().min();
        if !(min_eig > 0.0) {
            out.push(Violation::NotPositiveDefinite {
                min_eigenvalue: min_eig,
            });
        }
    }
    if let Some(cs) = &qp.structure {
        let sv = cs.violations();
        let ok = sv.is_empty();
        out.extend(sv);
        if ok {
            if cs.dim() != n {
                out.push(Violation::Shape {
                    block: "structure",
                    expected: (n, n),
                    got: (cs.dim(), cs.dim()),
                });
            } else {
                let diff = (cs.materialize() - &qp.w).amax();
                if diff > SYMMETRY_TOL * qp.w.amax().max(1.0) {
                    out.push(Violation::StructureMismatch { max_abs_diff: diff });
                }
            }
        }
    }
    out
}

/// Evaluates the five KKT blocks of `sol` against `qp`.
pub fn kkt_residual(qp: &StandardQP, sol: &QpSolution) -> Result<KktResidual, QpError> {
    check_len("z", qp.n(), sol.z.len())?;
    check_len("gamma", qp.n_ineq(), sol.gamma.len())?;
    check_len("alpha_eq", qp.n_eq(), sol.alpha_eq.len())?;
    let stat = &qp.w * &sol.z + &qp.g + qp.a.tr_mul(&sol.alpha_eq) + qp.p.tr_mul(&sol.gamma);
    let eq = &qp.a * &sol.z - &qp.b;
    let slack = qp.slack_violation(&sol.z);
    let primal_ineq = slack.iter().fold(0.0_f64, |m, &s| m.max(s));
    let complementarity = slack
        .iter()
        .zip(sol.gamma.iter())
        .fold(0.0_f64, |m, (s, g)| m.max((s * g).abs()));
    let dual_feas = sol.gamma.iter().fold(0.0_f64, |m, &g| m.max(-g));
    Ok(KktResidual {
        stationarity: inf_norm(&stat),
        primal_eq: inf_norm(&eq),
        primal_ineq,
        complementarity,
        dual_feas,
    })
}

pub(crate) fn check_len(block: &'static str, expected: usize, got: usize) -> Result<(), QpError> {
    if expected == got {
        Ok(())
    } else {
        Err(QpError::Dimension {
            block,
            expected,
            got,
        })
    }
}

pub(crate) fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
