//! Sparse direct factorization used for projections and Newton updates.
//!
//! Backed by faer's sparse LU. The symbolic analysis is done once per sparsity
//! pattern and reused across refactorizations; time stepping refactorizes the
//! Jacobian every Newton iteration against the cached symbolic data.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};

use crate::error::{Error, Result};
use crate::fem::sparse::SparseMatrix;

/// Reusable symbolic context for matrices sharing one sparsity pattern.
pub struct DirectSolver {
    dim: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    csr_to_csc: Vec<usize>,
    symbolic: SymbolicLu<usize>,
    csc_values: Vec<f64>,
}

/// A numeric LU factorization produced by [`DirectSolver::factorize`].
pub struct Factorization {
    dim: usize,
    lu: Lu<usize, f64>,
}

impl DirectSolver {
    /// Performs the symbolic analysis for the pattern of `matrix` (values are
    /// ignored). The matrix must be square.
    pub fn new(matrix: &SparseMatrix) -> Result<Self> {
        if matrix.nrows != matrix.ncols {
            return Err(Error::LinearSolve(format!(
                "matrix is {}x{}, expected square",
                matrix.nrows, matrix.ncols
            )));
        }
        let dim = matrix.nrows;
        let (col_ptr, row_idx) = matrix.csc_pattern();
        let csr_to_csc = matrix.csc_value_permutation();
        let symbolic_mat =
            SymbolicSparseColMatRef::new_checked(dim, dim, &col_ptr, None, &row_idx);
        let symbolic = SymbolicLu::try_new(symbolic_mat)
            .map_err(|e| Error::LinearSolve(format!("symbolic LU failed: {e:?}")))?;
        Ok(DirectSolver {
            dim,
            col_ptr,
            row_idx,
            csr_to_csc,
            symbolic,
            csc_values: vec![0.0; matrix.nnz()],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Numeric factorization of `matrix`, which must have the exact pattern
    /// this solver was created with.
    pub fn factorize(&mut self, matrix: &SparseMatrix) -> Result<Factorization> {
        assert_eq!(matrix.nnz(), self.csr_to_csc.len(), "pattern mismatch");
        for (p, &src) in self.csr_to_csc.iter().enumerate() {
            self.csc_values[p] = matrix.values[src];
        }
        let symbolic_mat = SymbolicSparseColMatRef::new_checked(
            self.dim,
            self.dim,
            &self.col_ptr,
            None,
            &self.row_idx,
        );
        let mat = SparseColMatRef::new(symbolic_mat, &self.csc_values);
        let lu = Lu::try_new_with_symbolic(self.symbolic.clone(), mat)
            .map_err(|e| Error::LinearSolve(format!("numeric LU failed: {e:?}")))?;
        Ok(Factorization { dim: self.dim, lu })
    }
}

impl Factorization {
    /// Solves A x = b in place.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        assert_eq!(rhs.len(), self.dim);
        let mat = faer::MatMut::from_column_major_slice_mut(rhs, self.dim, 1);
        self.lu.solve_in_place(mat);
    }
}

/// Convenience: factorize once and solve a single system.
pub fn solve_sparse(matrix: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let mut solver = DirectSolver::new(matrix)?;
    let fact = solver.factorize(matrix)?;
    let mut x = rhs.to_vec();
    fact.solve_in_place(&mut x);
    Ok(x)
}

/// Selects the number of threads used by the factorization backend.
/// `0` (the default) keeps everything sequential and bit-reproducible.
pub fn set_parallelism(threads: usize) {
    if threads <= 1 {
        faer::set_global_parallelism(faer::Par::Seq);
    } else {
        faer::set_global_parallelism(faer::Par::rayon(threads));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_unsymmetric_system() {
        // [3 1 0; 1 2 1; 0 0.5 4] x = b with x = (1, -2, 3).
        let mut m = SparseMatrix::from_pattern(
            3,
            3,
            &[vec![0, 1], vec![0, 1, 2], vec![1, 2]],
        );
        m.add(0, 0, 3.0);
        m.add(0, 1, 1.0);
        m.add(1, 0, 1.0);
        m.add(1, 1, 2.0);
        m.add(1, 2, 1.0);
        m.add(2, 1, 0.5);
        m.add(2, 2, 4.0);
        let x_true = [1.0, -2.0, 3.0];
        let mut b = vec![0.0; 3];
        m.matvec(&x_true, &mut b);
        let x = solve_sparse(&m, &b).unwrap();
        for (xi, ti) in x.iter().zip(x_true.iter()) {
            assert!((xi - ti).abs() < 1e-13);
        }
    }

    #[test]
    fn refactorize_reuses_symbolic() {
        let mut m = SparseMatrix::from_pattern(2, 2, &[vec![0, 1], vec![0, 1]]);
        m.add(0, 0, 2.0);
        m.add(0, 1, 1.0);
        m.add(1, 0, 0.0);
        m.add(1, 1, 1.0);
        let mut solver = DirectSolver::new(&m).unwrap();
        let f1 = solver.factorize(&m).unwrap();
        let mut x = vec![3.0, 1.0];
        f1.solve_in_place(&mut x);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);

        m.set_zero();
        m.add(0, 0, 1.0);
        m.add(0, 1, 0.0);
        m.add(1, 0, 1.0);
        m.add(1, 1, -1.0);
        let f2 = solver.factorize(&m).unwrap();
        let mut y = vec![2.0, 0.0];
        f2.solve_in_place(&mut y);
        assert!((y[0] - 2.0).abs() < 1e-14 && (y[1] - 2.0).abs() < 1e-14);
    }
}
