//! Compressed-row sparse matrices with a fixed, deterministic pattern.
//!
//! Patterns are built once from the mesh connectivity; repeated assemblies
//! only rewrite the value array, so the nonzero layout (and therefore every
//! accumulation order) is identical across runs.

/// CSR matrix. Column indices are sorted within each row.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// A zero matrix over the given pattern. `cols_per_row[i]` must be sorted
    /// and duplicate-free.
    pub fn from_pattern(nrows: usize, ncols: usize, cols_per_row: &[Vec<usize>]) -> Self {
        assert_eq!(cols_per_row.len(), nrows);
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for cols in cols_per_row {
            debug_assert!(cols.windows(2).all(|w| w[0] < w[1]));
            col_idx.extend_from_slice(cols);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn set_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Position of entry (i, j) in the value array, if present in the pattern.
    #[inline]
    pub fn value_index(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .binary_search(&j)
            .ok()
            .map(|k| lo + k)
    }

    /// Adds `v` to entry (i, j). Panics if (i, j) is outside the pattern.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .value_index(i, j)
            .expect("entry outside the sparsity pattern");
        self.values[k] += v;
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    /// True when for every stored (i, j) the entry (j, i) is stored too.
    pub fn is_structurally_symmetric(&self) -> bool {
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.value_index(self.col_idx[k], i).is_none() {
                    return false;
                }
            }
        }
        true
    }

    /// Maximum of |a_ij - a_ji| over the pattern (0 for a symmetric matrix).
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let vt = self
                    .value_index(j, i)
                    .map(|p| self.values[p])
                    .unwrap_or(0.0);
                worst = worst.max((self.values[k] - vt).abs());
            }
        }
        worst
    }

    /// Permutation mapping CSR value positions to the column-major (CSC)
    /// ordering of the same matrix: `csc_values[p] = values[perm[p]]`.
    pub fn csc_value_permutation(&self) -> Vec<usize> {
        let mut col_counts = vec![0usize; self.ncols];
        for &j in &self.col_idx {
            col_counts[j] += 1;
        }
        let mut col_start = vec![0usize; self.ncols + 1];
        for j in 0..self.ncols {
            col_start[j + 1] = col_start[j] + col_counts[j];
        }
        let mut perm = vec![0usize; self.nnz()];
        let mut cursor = col_start.clone();
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                perm[cursor[j]] = k;
                cursor[j] += 1;
            }
        }
        perm
    }

    /// CSC column pointers and row indices of the same pattern (rows sorted
    /// within each column, consistent with [`csc_value_permutation`]).
    pub fn csc_pattern(&self) -> (Vec<usize>, Vec<usize>) {
        let mut col_counts = vec![0usize; self.ncols];
        for &j in &self.col_idx {
            col_counts[j] += 1;
        }
        let mut col_ptr = vec![0usize; self.ncols + 1];
        for j in 0..self.ncols {
            col_ptr[j + 1] = col_ptr[j] + col_counts[j];
        }
        let mut row_idx = vec![0usize; self.nnz()];
        let mut cursor = col_ptr.clone();
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                row_idx[cursor[j]] = i;
                cursor[j] += 1;
            }
        }
        (col_ptr, row_idx)
    }
}
