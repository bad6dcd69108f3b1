//! Threshold incomplete Cholesky factorization for symmetric positive
//! definite matrices.
//!
//! The factorization is column-oriented and left-looking. Candidate entries
//! of column j are dropped after scaling by the pivot whenever their
//! magnitude falls below `droptol` times the 2-norm of column j of the input
//! matrix; diagonal entries are never dropped. With `droptol = 0` the result
//! is an exact Cholesky factor on the fill-in pattern, i.e. plain Cholesky.

use thiserror::Error;

use crate::block::BlockVector;
use crate::csr::{CsrMatrix, SparseError};

#[derive(Debug, Error)]
pub enum IcError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("incomplete Cholesky breakdown at column {column}: pivot {pivot:.6e}")]
    Breakdown { column: usize, pivot: f64 },
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// Lower-triangular incomplete factor L with L L' ~ A.
#[derive(Debug, Clone)]
pub struct IcFactor {
    pub l: CsrMatrix,
    pub droptol: f64,
    /// Relative diagonal shift that was applied before factoring.
    pub shift: f64,
}

impl IcFactor {
    pub fn dim(&self) -> usize {
        self.l.rows
    }

    /// Solves L L' z = r by forward and backward substitution.
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let n = self.l.rows;
        assert_eq!(r.len(), n, "operand length mismatch");
        let mut x = vec![0.0; n];
        for i in 0..n {
            let (cols, vals) = self.l.row(i);
            let mut s = r[i];
            for idx in 0..cols.len() - 1 {
                s -= vals[idx] * x[cols[idx]];
            }
            x[i] = s / vals[cols.len() - 1];
        }
        for i in (0..n).rev() {
            let (cols, vals) = self.l.row(i);
            let xi = x[i] / vals[cols.len() - 1];
            x[i] = xi;
            for idx in 0..cols.len() - 1 {
                x[cols[idx]] -= vals[idx] * xi;
            }
        }
        x
    }

    pub fn apply_block(&self, r: &BlockVector) -> BlockVector {
        let mut out = BlockVector::zeros(r.n, r.k);
        for j in 0..r.k {
            let col = self.apply(r.column(j));
            out.column_mut(j).copy_from_slice(&col);
        }
        out
    }
}

/// Factors A into L L' with threshold dropping.
pub fn ict_factor(a: &CsrMatrix, droptol: f64) -> Result<IcFactor, IcError> {
    if a.rows != a.cols {
        return Err(IcError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    let col_norms: Vec<f64> = (0..n)
        .map(|i| {
            let (_, vals) = a.row(i);
            vals.iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .collect();

    // cols_l[j] holds finalized column j sorted by row; row_lists[i] records
    // (k, l_ik) for finalized columns k so column i's update loop can find
    // the columns that touch it without scanning everything.
    let mut cols_l: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut row_lists: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut w = vec![0.0; n];
    let mut in_pattern = vec![false; n];
    let mut touched: Vec<usize> = Vec::new();

    for j in 0..n {
        // Load the lower part of column j of A (row j by symmetry).
        let (cols, vals) = a.row(j);
        for (&c, &v) in cols.iter().zip(vals) {
            if c >= j {
                if !in_pattern[c] {
                    in_pattern[c] = true;
                    touched.push(c);
                }
                w[c] += v;
            }
        }
        if !in_pattern[j] {
            in_pattern[j] = true;
            touched.push(j);
        }
        for &(k, l_jk) in &row_lists[j] {
            for &(i, l_ik) in &cols_l[k] {
                if i < j {
                    continue;
                }
                if !in_pattern[i] {
                    in_pattern[i] = true;
                    touched.push(i);
                }
                w[i] -= l_jk * l_ik;
            }
        }
        let pivot = w[j];
        if pivot <= 0.0 {
            for &i in &touched {
                w[i] = 0.0;
                in_pattern[i] = false;
            }
            return Err(IcError::Breakdown { column: j, pivot });
        }
        let piv_sqrt = pivot.sqrt();
        let threshold = droptol * col_norms[j];
        touched.sort_unstable();
        let mut column = Vec::with_capacity(touched.len());
        for &i in &touched {
            let raw = w[i];
            w[i] = 0.0;
            in_pattern[i] = false;
            if i == j {
                column.push((j, piv_sqrt));
                continue;
            }
            let val = raw / piv_sqrt;
            if val.abs() < threshold {
                continue;
            }
            column.push((i, val));
            row_lists[i].push((j, val));
        }
        cols_l[j] = column;
        touched.clear();
    }

    let mut triplets = Vec::new();
    for (j, column) in cols_l.iter().enumerate() {
        for &(i, v) in column {
            triplets.push((i, j, v));
        }
    }
    Ok(IcFactor {
        l: CsrMatrix::from_triplets(n, n, triplets)?,
        droptol,
        shift: 0.0,
    })
}

/// Like [`ict_factor`], but on breakdown retries on A + sigma diag(A) with
/// sigma = 1e-3, growing tenfold, up to three times. Returns the factor and
/// the shift that succeeded.
pub fn ict_factor_shifted(a: &CsrMatrix, droptol: f64) -> Result<(IcFactor, f64), IcError> {
    let mut last = match ict_factor(a, droptol) {
        Ok(f) => return Ok((f, 0.0)),
        Err(e @ IcError::Breakdown { .. }) => e,
        Err(e) => return Err(e),
    };
    let mut sigma = 1e-3;
    for _ in 0..3 {
        let shifted = with_scaled_diagonal(a, sigma);
        match ict_factor(&shifted, droptol) {
            Ok(mut f) => {
                f.shift = sigma;
                return Ok((f, sigma));
            }
            Err(e @ IcError::Breakdown { .. }) => {
                last = e;
                sigma *= 10.0;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

fn with_scaled_diagonal(a: &CsrMatrix, sigma: f64) -> CsrMatrix {
    let mut out = a.clone();
    for i in 0..out.rows {
        let (start, end) = (out.row_ptr[i], out.row_ptr[i + 1]);
        for idx in start..end {
            if out.col_idx[idx] == i {
                out.values[idx] *= 1.0 + sigma;
            }
        }
    }
    out
}
