//! Dense helpers around nalgebra's Cholesky and symmetric eigensolver.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Jitter levels tried, in order, after the configured jitter fails.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

/// Cholesky factor together with the diagonal jitter that made it succeed.
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
    pub escalated: bool,
}

fn jittered(m: &DMatrix<f64>, j: f64) -> DMatrix<f64> {
    let mut a = m.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += j;
    }
    a
}

/// Factor `m + jitter I`, escalating along [`JITTER_LADDER`] on failure.
pub fn cholesky_ladder(m: &DMatrix<f64>, jitter: f64) -> Result<Factor> {
    if let Some(chol) = Cholesky::new(jittered(m, jitter)) {
        if diag_ok(&chol) {
            return Ok(Factor {
                chol,
                jitter,
                escalated: false,
            });
        }
    }
    for &j in JITTER_LADDER.iter().filter(|&&j| j > jitter) {
        if let Some(chol) = Cholesky::new(jittered(m, j)) {
            if diag_ok(&chol) {
                return Ok(Factor {
                    chol,
                    jitter: j,
                    escalated: true,
                });
            }
        }
    }
    Err(Error::Singular(format!(
        "{}x{} matrix not positive definite at jitter {:e}",
        m.nrows(),
        m.ncols(),
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

fn diag_ok(c: &Cholesky<f64, Dyn>) -> bool {
    let l = c.l_dirty();
    (0..l.nrows()).all(|i| l[(i, i)].is_finite() && l[(i, i)] > 0.0)
}

pub fn logdet(f: &Factor) -> f64 {
    let l = f.chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn subvector(m: &DMatrix<f64>, rows: &[usize], col: usize) -> DVector<f64> {
    DVector::from_fn(rows.len(), |i, _| m[(rows[i], col)])
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let e = nalgebra::SymmetricEigen::new(m.clone());
    let mut v: Vec<f64> = e.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Matrix infinity norm (largest absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
