//! Sparse factorizations, conjugate gradients on the pressure Schur
//! complement, the sinc-quadrature fractional inverse and thresholded
//! pseudoinverse solves.

mod cg;
mod dense;
mod fractional;
pub mod sparse;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::{Mat, Side};
use thiserror::Error;

pub use cg::{cg_solve, cg_solve_batch, CgOptions, CgResult, SaddleSolution, SaddleSystem};
pub use dense::{condition_number, pinv_solve, GramMode, GramReport};
pub use fractional::{FractionalOperator, SincRule};
pub use sparse::CsrMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is {rows} x {cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix of size {0} is singular or not positive definite")]
    Singular(usize),
    #[error("conjugate gradients broke down at iteration {0}")]
    Breakdown(usize),
    #[error("zero or negative diagonal entry {index} in Jacobi scaling")]
    ZeroDiagonal { index: usize },
    #[error("invalid fractional order {0}")]
    InvalidOrder(f64),
    #[error("invalid sinc step {0}")]
    InvalidStep(f64),
    #[error("non-finite values in input")]
    NonFinite,
}

/// Sparse Cholesky factorization of a symmetric positive definite matrix.
pub struct Factorization {
    n: usize,
    llt: Llt<usize, f64>,
}

impl Factorization {
    pub fn new(a: &CsrMatrix) -> Result<Self, LinalgError> {
        let mat = Self::checked(a)?;
        let symbolic = SymbolicLlt::try_new(mat.symbolic(), Side::Lower).map_err(|_| LinalgError::Singular(a.nrows()))?;
        Self::numeric(symbolic, &mat)
    }

    /// Reuses the ordering and elimination tree of a matrix with the same pattern.
    pub fn with_symbolic(symbolic: &SymbolicLlt<usize>, a: &CsrMatrix) -> Result<Self, LinalgError> {
        let mat = Self::checked(a)?;
        Self::numeric(symbolic.clone(), &mat)
    }

    pub fn symbolic_of(a: &CsrMatrix) -> Result<SymbolicLlt<usize>, LinalgError> {
        let mat = Self::checked(a)?;
        SymbolicLlt::try_new(mat.symbolic(), Side::Lower).map_err(|_| LinalgError::Singular(a.nrows()))
    }

    fn checked(a: &CsrMatrix) -> Result<faer::sparse::SparseColMat<usize, f64>, LinalgError> {
        if a.nrows() != a.ncols() {
            return Err(LinalgError::NotSquare { rows: a.nrows(), cols: a.ncols() });
        }
        if a.triplets().any(|(_, _, v)| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        faer::set_global_parallelism(faer::Par::Seq);
        Ok(a.to_faer())
    }

    fn numeric(symbolic: SymbolicLlt<usize>, mat: &faer::sparse::SparseColMat<usize, f64>) -> Result<Self, LinalgError> {
        let n = mat.nrows();
        let llt = Llt::try_new_with_symbolic(symbolic, mat.as_ref(), Side::Lower).map_err(|_| LinalgError::Singular(n))?;
        Ok(Factorization { n, llt })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut m = Mat::from_fn(self.n, 1, |i, _| b[i]);
        self.llt.solve_in_place(m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }

    /// Solves for several right-hand sides at once.
    pub fn solve_many(&self, rhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if rhs.is_empty() {
            return Vec::new();
        }
        let mut m = Mat::from_fn(self.n, rhs.len(), |i, j| rhs[j][i]);
        self.llt.solve_in_place(m.as_mut());
        (0..rhs.len()).map(|j| (0..self.n).map(|i| m[(i, j)]).collect()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_small_system() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]);
        let f = Factorization::new(&a).unwrap();
        let x = f.solve(&[1.0, 2.0]);
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-15);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-15);
        let many = f.solve_many(&[vec![1.0, 2.0], vec![4.0, 1.0]]);
        assert_eq!(many[0], x);
        assert!((many[1][0] - 1.0).abs() < 1e-15 && many[1][1].abs() < 1e-15);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(matches!(Factorization::new(&a), Err(LinalgError::Singular(2))));
        let r = CsrMatrix::zeros(2, 3);
        assert!(matches!(Factorization::new(&r), Err(LinalgError::NotSquare { .. })));
    }
}
