//! Row-major vectorization and the 0/1 matrix `W` that turns `vec(C)` into
//! `vec(C ⊗ I_d)`.

use nalgebra::DMatrix;

/// Concatenation of rows.
pub fn vec_rows(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`vec_rows`].
pub fn mat_rows(v: &[f64], nrows: usize, ncols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), nrows * ncols, "mat_rows: length mismatch");
    DMatrix::from_row_slice(nrows, ncols, v)
}

/// Sparse `m n d^2 x m n` matrix with at most one unit entry per row.
#[derive(Debug, Clone, PartialEq)]
pub struct WMatrix {
    pub nrows: usize,
    pub ncols: usize,
    /// Column of the single 1 in each row, if any.
    pub col_of_row: Vec<Option<usize>>,
}

/// Builds `W^{m,n}_d` with `vec(C ⊗ I_d) = W vec(C)` for any `m x n` matrix `C`.
///
/// Row `(i, a, j, b)` of `vec(C ⊗ I_d)` holds `C_ij δ_ab`.
pub fn w_matrix(m: usize, n: usize, d: usize) -> WMatrix {
    let mut col_of_row = Vec::with_capacity(m * n * d * d);
    for i in 0..m {
        for a in 0..d {
            for j in 0..n {
                for b in 0..d {
                    col_of_row.push((a == b).then_some(i * n + j));
                }
            }
        }
    }
    WMatrix { nrows: m * n * d * d, ncols: m * n, col_of_row }
}

impl WMatrix {
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.ncols);
        self.col_of_row.iter().map(|c| c.map_or(0.0, |c| v[c])).collect()
    }

    /// `lhs * W` for a dense left factor.
    pub fn left_mul(&self, lhs: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(lhs.ncols(), self.nrows);
        let mut out = DMatrix::zeros(lhs.nrows(), self.ncols);
        for (r, c) in self.col_of_row.iter().enumerate() {
            if let Some(c) = *c {
                for k in 0..lhs.nrows() {
                    out[(k, c)] += lhs[(k, r)];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c) in self.col_of_row.iter().enumerate() {
            if let Some(c) = *c {
                out[(r, c)] = 1.0;
            }
        }
        out
    }
}
