//! Small dense linear-algebra helpers shared by the samplers and kernels.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// A symmetric positive definite matrix, validated at construction.
///
/// Construction factors the matrix once; the factor is reused for draws,
/// solves, and inverses so callers never repeat the work.
#[derive(Clone, Debug)]
pub struct Spd {
    m: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Spd {
    /// Validates symmetry (up to a scaled tolerance) and positive
    /// definiteness via Cholesky. `context` names the matrix in errors.
    pub fn new(m: DMatrix<f64>, context: &str) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{context}: expected square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.amax().max(1.0);
        for i in 0..m.nrows() {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-8 * scale {
                    return Err(Error::NotPositiveDefinite(format!(
                        "{context}: matrix is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let chol = Cholesky::new(m.clone())
            .ok_or_else(|| Error::NotPositiveDefinite(context.to_string()))?;
        Ok(Spd { m, chol })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Lower Cholesky factor L with `L L^T = M`.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }
}

/// Cholesky-factor a matrix that must be positive definite, mapping failure
/// to a numeric error tagged with `context`.
pub fn spd_cholesky(m: DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::Numeric {
        detail: format!("{context}: Cholesky factorization failed"),
        iteration: None,
    })
}

/// Replace accumulated round-off asymmetry with the symmetric part.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Stack the lower triangle column by column: (1,1),(2,1),...,(q,1),(2,2),...
pub fn vech(m: &DMatrix<f64>) -> Vec<f64> {
    let q = m.nrows();
    let mut out = Vec::with_capacity(q * (q + 1) / 2);
    for j in 0..q {
        for i in j..q {
            out.push(m[(i, j)]);
        }
    }
    out
}
