//! Compressed sparse row matrices with real values.
//!
//! Only the handful of kernels the models need are provided: sparse times
//! dense, row scaling and densification for tests.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

/// Real-valued CSR matrix. Column indices are sorted within every row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from raw CSR arrays. Panics if the arrays are inconsistent.
    pub fn from_raw(
        n_rows: usize,
        n_cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        assert_eq!(indptr.len(), n_rows + 1, "indptr length");
        assert_eq!(indices.len(), values.len(), "indices/values length");
        assert_eq!(*indptr.last().unwrap(), indices.len(), "indptr tail");
        debug_assert!(indices.iter().all(|&c| c < n_cols));
        Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_raw(n, n, (0..=n).collect(), (0..n).collect(), vec![1.0; n])
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of one row.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    /// Entry lookup by binary search; zero when absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    /// `self * dense`, parallel over output rows. Every row is reduced in
    /// column-index order, so the result does not depend on the thread count.
    pub fn matmul(&self, dense: &ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(self.n_cols, dense.nrows(), "sparse-dense inner dimension");
        let d = dense.ncols();
        let mut out = Array2::<f64>::zeros((self.n_rows, d));
        if d == 0 {
            return out;
        }
        let dense = dense.as_standard_layout();
        let src = dense.as_slice().expect("standard layout");
        let dst = out.as_slice_mut().expect("fresh array");
        dst.par_chunks_mut(d)
            .enumerate()
            .with_min_len(64)
            .for_each(|(i, out_row)| {
                let (cols, vals) = self.row(i);
                for (&j, &a) in cols.iter().zip(vals) {
                    for (o, &x) in out_row.iter_mut().zip(&src[j * d..(j + 1) * d]) {
                        *o += a * x;
                    }
                }
            });
        out
    }

    /// Sequential reference for [`CsrMatrix::matmul`].
    pub fn matmul_sequential(&self, dense: &ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(self.n_cols, dense.nrows(), "sparse-dense inner dimension");
        let mut out = Array2::<f64>::zeros((self.n_rows, dense.ncols()));
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                for c in 0..dense.ncols() {
                    out[[i, c]] += a * dense[[j, c]];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.n_cols {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                indices[next[c]] = i;
                values[next[c]] = v;
                next[c] += 1;
            }
        }
        CsrMatrix::from_raw(self.n_cols, self.n_rows, counts, indices, values)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((self.n_rows, self.n_cols));
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// Exact (bitwise) symmetry check.
    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && self == &self.transpose()
    }

    /// Iterates over stored entries as `(row, col, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }
}
