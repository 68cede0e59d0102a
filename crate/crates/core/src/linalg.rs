//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Lower-triangular Cholesky factor with an explicit pivot threshold.
///
/// Factorization fails when a pivot falls below `tol · max(diag)`, which is
/// how rank deficiency of a Schur complement is detected.
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    l: DMatrix<f64>,
}

impl PivotedCholesky {
    pub fn new(m: &DMatrix<f64>, tol: f64) -> Option<Self> {
        let n = m.nrows();
        debug_assert_eq!(n, m.ncols());
        let scale = (0..n).fold(0.0_f64, |s, i| s.max(m[(i, i)].abs()));
        let threshold = tol * scale.max(f64::MIN_POSITIVE);
        let mut l = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > threshold) {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut y = rhs.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }
}
