//! Compressed sparse row matrices and diagonal solves.
//!
//! CSR is the single sparse format used everywhere; transposed products are
//! applied implicitly so no CSC twin is ever materialized. Construction
//! rejects duplicate entries outright: finite-element assembly is expected to
//! merge its contributions before building a matrix, and a stray duplicate
//! almost always means an assembly bug.

use thiserror::Error;

use crate::block::BlockVector;
use crate::dense::DenseMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("dimension mismatch: {context} expects length {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("entry ({row}, {col}) lies outside a {rows}x{cols} matrix")]
    EntryOutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("duplicate entry at ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },
    #[error("diagonal is not positive: entry {index} is {value}")]
    NotPositiveDiagonal { index: usize, value: f64 },
}

/// Sparse matrix in compressed sparse row form.
///
/// Invariants: `row_ptr` is nondecreasing with `row_ptr[0] == 0` and
/// `row_ptr[rows] == values.len()`; within each row the column indices are
/// strictly increasing and below `cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from (row, col, value) triplets.
    ///
    /// Triplets may arrive in any order; duplicates are an error.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self, SparseError> {
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(SparseError::EntryOutOfBounds {
                    row: r,
                    col: c,
                    rows,
                    cols,
                });
            }
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(SparseError::DuplicateEntry {
                    row: w[0].0,
                    col: w[0].1,
                });
            }
        }
        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = entries.iter().map(|&(_, c, _)| c).collect();
        let values = entries.iter().map(|&(_, _, v)| v).collect();
        Ok(CsrMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Diagonal matrix with the given entries.
    pub fn from_diag(d: &[f64]) -> Self {
        let n = d.len();
        CsrMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    /// Matrix with no stored entries.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CsrMatrix {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// Stored value at (i, j), zero if absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// y = M x, accumulated in row order.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.cols {
            return Err(SparseError::DimensionMismatch {
                context: "spmv operand",
                expected: self.cols,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
        Ok(y)
    }

    /// y = M' x without materializing the transpose.
    pub fn spmv_transpose(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.rows {
            return Err(SparseError::DimensionMismatch {
                context: "spmv_transpose operand",
                expected: self.rows,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.values[k] * xi;
            }
        }
        Ok(y)
    }

    /// Applies the matrix to each column of a block; column j of the result
    /// is exactly `spmv` on column j of the input, bit for bit.
    pub fn block_spmv(&self, x: &BlockVector) -> Result<BlockVector, SparseError> {
        if x.n != self.cols {
            return Err(SparseError::DimensionMismatch {
                context: "block_spmv operand",
                expected: self.cols,
                got: x.n,
            });
        }
        let mut out = BlockVector::zeros(self.rows, x.k);
        for j in 0..x.k {
            let xj = x.column(j);
            let yj = out.column_mut(j);
            for i in 0..self.rows {
                let mut acc = 0.0;
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    acc += self.values[k] * xj[self.col_idx[k]];
                }
                yj[i] = acc;
            }
        }
        Ok(out)
    }

    /// Explicit transpose (used for symmetry checks, not for products).
    pub fn transpose(&self) -> CsrMatrix {
        let mut row_ptr = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            row_ptr[c + 1] += 1;
        }
        for i in 0..self.cols {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut next = row_ptr.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let c = self.col_idx[k];
                let pos = next[c];
                col_idx[pos] = i;
                values[pos] = self.values[k];
                next[c] += 1;
            }
        }
        CsrMatrix {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Largest absolute asymmetry `max |M - M'|` over all stored positions.
    pub fn max_asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - t.get(i, c)).abs());
            }
            let (tcols, tvals) = t.row(i);
            for (&c, &v) in tcols.iter().zip(tvals) {
                worst = worst.max((v - self.get(i, c)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                d.set(i, self.col_idx[k], self.values[k]);
            }
        }
        d
    }
}

/// Sorts triplets by (row, col) and sums entries at the same position.
/// Assembly-side helper so `from_triplets` can stay strict.
pub(crate) fn sum_duplicate_triplets(entries: &mut Vec<(usize, usize, f64)>) {
    entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
    let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
    for &(r, c, v) in entries.iter() {
        match out.last_mut() {
            Some(last) if last.0 == r && last.1 == c => last.2 += v,
            _ => out.push((r, c, v)),
        }
    }
    *entries = out;
}

/// Entrywise x / d for a positive diagonal d.
pub fn diag_solve(d: &[f64], x: &[f64]) -> Result<Vec<f64>, SparseError> {
    if x.len() != d.len() {
        return Err(SparseError::DimensionMismatch {
            context: "diag_solve operand",
            expected: d.len(),
            got: x.len(),
        });
    }
    check_positive(d)?;
    Ok(x.iter().zip(d).map(|(xi, di)| xi / di).collect())
}

/// Per-column `diag_solve` on a block.
pub fn diag_solve_block(d: &[f64], x: &BlockVector) -> Result<BlockVector, SparseError> {
    if x.n != d.len() {
        return Err(SparseError::DimensionMismatch {
            context: "diag_solve operand",
            expected: d.len(),
            got: x.n,
        });
    }
    check_positive(d)?;
    let mut out = BlockVector::zeros(x.n, x.k);
    for j in 0..x.k {
        let xj = x.column(j);
        let oj = out.column_mut(j);
        for i in 0..d.len() {
            oj[i] = xj[i] / d[i];
        }
    }
    Ok(out)
}

fn check_positive(d: &[f64]) -> Result<(), SparseError> {
    for (i, &di) in d.iter().enumerate() {
        if di <= 0.0 {
            return Err(SparseError::NotPositiveDiagonal {
                index: i,
                value: di,
            });
        }
    }
    Ok(())
}
