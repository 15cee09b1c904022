//! Compressed-sparse-column storage.
//!
//! Only the handful of kernels the solvers need: column walks, mat-vec in
//! both orientations, dense sub-blocks and weighted Gram matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{BcdError, Result};

/// A `(row, col, value)` triple.
pub type Triplet = (usize, usize, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    /// Builds a matrix from triplets. Duplicate entries are summed and
    /// explicit zeros are dropped; row indices within a column are sorted.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[Triplet]) -> Result<Self> {
        let mut per_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ncols];
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return Err(BcdError::InvalidArgument(format!(
                    "triplet ({r}, {c}) outside {nrows}x{ncols}"
                )));
            }
            if !v.is_finite() {
                return Err(BcdError::InvalidArgument(format!(
                    "non-finite value at ({r}, {c})"
                )));
            }
            per_col[c].push((r, v));
        }
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for mut col in per_col {
            col.sort_by_key(|&(r, _)| r);
            let mut i = 0;
            while i < col.len() {
                let r = col[i].0;
                let mut v = 0.0;
                while i < col.len() && col[i].0 == r {
                    v += col[i].1;
                    i += 1;
                }
                if v != 0.0 {
                    row_idx.push(r);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn from_dense(dense: &DMatrix<f64>) -> Self {
        let mut trips = Vec::new();
        for c in 0..dense.ncols() {
            for r in 0..dense.nrows() {
                let v = dense[(r, c)];
                if v != 0.0 {
                    trips.push((r, c, v));
                }
            }
        }
        Self::from_triplets(dense.nrows(), dense.ncols(), &trips).expect("dense entries are in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Row indices and values stored in column `c`.
    #[inline]
    pub fn col(&self, c: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.col_ptr[c], self.col_ptr[c + 1]);
        (&self.row_idx[s..e], &self.values[s..e])
    }

    /// Stored value at `(r, c)`, zero if absent.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (rows, vals) = self.col(c);
        match rows.binary_search(&r) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<Triplet> {
        let mut out = Vec::with_capacity(self.nnz());
        for c in 0..self.ncols {
            let (rows, vals) = self.col(c);
            out.extend(rows.iter().zip(vals).map(|(&r, &v)| (r, c, v)));
        }
        out
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for (c, &xc) in x.iter().enumerate() {
            if xc == 0.0 {
                continue;
            }
            let (rows, vals) = self.col(c);
            for (&r, &v) in rows.iter().zip(vals) {
                y[r] += v * xc;
            }
        }
        y
    }

    /// `y += alpha * A[:, cols] d`.
    pub fn add_cols_mul(&self, cols: &[usize], d: &[f64], alpha: f64, y: &mut [f64]) {
        for (&c, &dc) in cols.iter().zip(d) {
            let s = alpha * dc;
            if s == 0.0 {
                continue;
            }
            let (rows, vals) = self.col(c);
            for (&r, &v) in rows.iter().zip(vals) {
                y[r] += v * s;
            }
        }
    }

    /// `A[:, c]^T y`.
    #[inline]
    pub fn col_dot(&self, c: usize, y: &[f64]) -> f64 {
        let (rows, vals) = self.col(c);
        rows.iter().zip(vals).map(|(&r, &v)| v * y[r]).sum()
    }

    /// `A^T y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.nrows);
        (0..self.ncols).map(|c| self.col_dot(c, y)).collect()
    }

    /// Dense sub-matrix `A[rows, cols]` for sorted `rows`.
    pub fn dense_block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        for (j, &c) in cols.iter().enumerate() {
            let (ri, vals) = self.col(c);
            for (&r, &v) in ri.iter().zip(vals) {
                if let Ok(i) = rows.binary_search(&r) {
                    out[(i, j)] = v;
                }
            }
        }
        out
    }

    /// Dense copy of the selected columns, `nrows x cols.len()`.
    pub fn dense_cols(&self, cols: &[usize]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, cols.len());
        for (j, &c) in cols.iter().enumerate() {
            let (ri, vals) = self.col(c);
            for (&r, &v) in ri.iter().zip(vals) {
                out[(r, j)] = v;
            }
        }
        out
    }

    /// `A[:, cols]^T diag(w) A[:, cols]`; `w = None` means identity weights.
    pub fn weighted_gram(&self, cols: &[usize], w: Option<&[f64]>) -> DMatrix<f64> {
        let k = cols.len();
        let mut g = DMatrix::zeros(k, k);
        // scatter column a into a dense buffer, then dot against the others
        let mut buf = vec![0.0; self.nrows];
        for a in 0..k {
            let (ra, va) = self.col(cols[a]);
            for (&r, &v) in ra.iter().zip(va) {
                buf[r] = match w {
                    Some(w) => v * w[r],
                    None => v,
                };
            }
            for b in a..k {
                let s = self.col_dot(cols[b], &buf);
                g[(a, b)] = s;
                g[(b, a)] = s;
            }
            for &r in ra {
                buf[r] = 0.0;
            }
        }
        g
    }

    /// Squared norm of each column, optionally weighted.
    pub fn col_sq_norms(&self) -> Vec<f64> {
        (0..self.ncols)
            .map(|c| self.col(c).1.iter().map(|v| v * v).sum())
            .collect()
    }

    /// Row-major adjacency of the stored pattern: for every row, the columns
    /// with a stored entry.
    pub fn row_pattern(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.nrows];
        for c in 0..self.ncols {
            for &r in self.col(c).0 {
                rows[r].push(c);
            }
        }
        rows
    }

    /// `A^T A` as a sparse matrix.
    pub fn gram(&self) -> CscMatrix {
        let rows = self.row_pattern();
        let mut row_vals: Vec<Vec<f64>> = vec![Vec::new(); self.nrows];
        for c in 0..self.ncols {
            let (ri, vals) = self.col(c);
            for (&r, &v) in ri.iter().zip(vals) {
                row_vals[r].push(v);
            }
        }
        let mut acc = vec![0.0; self.ncols];
        let mut touched = Vec::new();
        let mut mark = vec![false; self.ncols];
        let mut trips = Vec::new();
        for c in 0..self.ncols {
            let (ri, vals) = self.col(c);
            for (&r, &v) in ri.iter().zip(vals) {
                for (&c2, &v2) in rows[r].iter().zip(&row_vals[r]) {
                    if !mark[c2] {
                        mark[c2] = true;
                        touched.push(c2);
                    }
                    acc[c2] += v * v2;
                }
            }
            touched.sort_unstable();
            for &c2 in &touched {
                trips.push((c2, c, acc[c2]));
                acc[c2] = 0.0;
                mark[c2] = false;
            }
            touched.clear();
        }
        CscMatrix::from_triplets(self.ncols, self.ncols, &trips).expect("gram entries in range")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for c in 0..self.ncols {
            let (ri, vals) = self.col(c);
            for (&r, &v) in ri.iter().zip(vals) {
                d[(r, c)] = v;
            }
        }
        d
    }

    /// Largest `|A_ij - A_ji|` over stored entries, with its location.
    pub fn asymmetry(&self) -> Option<(usize, usize, f64)> {
        if self.nrows != self.ncols {
            return None;
        }
        let mut worst: Option<(usize, usize, f64)> = None;
        for c in 0..self.ncols {
            let (ri, vals) = self.col(c);
            for (&r, &v) in ri.iter().zip(vals) {
                let diff = (v - self.get(c, r)).abs();
                if diff > worst.map_or(0.0, |w| w.2) {
                    worst = Some((r, c, diff));
                }
            }
        }
        worst
    }

    pub fn scale(&self, s: f64) -> CscMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }
}
