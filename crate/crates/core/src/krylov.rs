//! Krylov solvers: left-preconditioned GMRES, preconditioned conjugate
//! gradients, and a block ("global") CG that shares one step size across all
//! right-hand sides.
//!
//! All solvers start from the zero vector and are deterministic: the same
//! operator, right-hand side, and options reproduce results bitwise.

use std::time::Instant;

use thiserror::Error;

use crate::block::BlockVector;
use crate::csr::CsrMatrix;

#[derive(Debug, Error)]
pub enum KrylovError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("operator is not positive definite: p'Ap = {value:.6e} at iteration {iteration}")]
    NotSpd { value: f64, iteration: usize },
}

/// Matrix-free linear operator.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Vec<f64>;
    fn apply_block(&self, v: &BlockVector) -> BlockVector {
        let mut out = BlockVector::zeros(v.n, v.k);
        for j in 0..v.k {
            let col = self.apply(v.column(j));
            out.column_mut(j).copy_from_slice(&col);
        }
        out
    }
    fn tag(&self) -> &'static str {
        "operator"
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.rows
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.spmv(v).expect("operator dimension mismatch")
    }

    fn apply_block(&self, v: &BlockVector) -> BlockVector {
        self.block_spmv(v).expect("operator dimension mismatch")
    }

    fn tag(&self) -> &'static str {
        "csr"
    }
}

/// Counters filled in by preconditioner applications.
#[derive(Debug, Clone, Default)]
pub struct PrecStats {
    pub applications: usize,
    /// Inner iteration count per recorded inner solve.
    pub inner_iters: Vec<usize>,
    pub non_converged: usize,
}

impl PrecStats {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Right-hand-side transformer z = P^{-1} r used by GMRES.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], stats: &mut PrecStats) -> Result<Vec<f64>, KrylovError>;
}

pub struct IdentityPrec;

impl Preconditioner for IdentityPrec {
    fn apply(&self, r: &[f64], stats: &mut PrecStats) -> Result<Vec<f64>, KrylovError> {
        stats.applications += 1;
        Ok(r.to_vec())
    }
}

/// Outcome of one solver run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    pub inner_mean: f64,
    pub inner_max: usize,
    pub inner_non_converged: usize,
    /// True relative residual of the returned iterate.
    pub res: f64,
    /// Relative error against a known solution, when one is available.
    pub err: Option<f64>,
    pub wall_seconds: f64,
    pub converged: bool,
    /// Relative residual estimates, one per outer iteration.
    pub history: Vec<f64>,
}

impl SolveReport {
    fn new() -> Self {
        SolveReport {
            outer_iters: 0,
            inner_iters_total: 0,
            inner_mean: 0.0,
            inner_max: 0,
            inner_non_converged: 0,
            res: 0.0,
            err: None,
            wall_seconds: 0.0,
            converged: false,
            history: Vec::new(),
        }
    }

    fn absorb_stats(&mut self, stats: &PrecStats) {
        self.inner_iters_total = stats.inner_iters.iter().sum();
        self.inner_max = stats.inner_iters.iter().copied().max().unwrap_or(0);
        self.inner_mean = if stats.inner_iters.is_empty() {
            0.0
        } else {
            self.inner_iters_total as f64 / stats.inner_iters.len() as f64
        };
        self.inner_non_converged = stats.non_converged;
    }
}

#[derive(Debug, Clone)]
pub struct GmresOptions {
    pub tol: f64,
    pub maxit: usize,
    /// Headroom factor: once the Givens estimate drops below
    /// `trigger * tol`, candidate solutions are formed and checked against
    /// the caller's true-residual closure every iteration.
    pub trigger: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            tol: 1e-7,
            maxit: 500,
            trigger: 1e3,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unrestarted GMRES with left preconditioning, modified Gram-Schmidt, and
/// Givens rotations, starting from the zero vector.
///
/// The Givens recurrence tracks the preconditioned residual, which can sit
/// below the residual of the original system. When `truth` is given it maps
/// a candidate iterate to its true relative residual, and convergence is
/// declared only once that value reaches `tol`; candidates are formed as
/// soon as the internal estimate falls below `trigger * tol`.
pub fn gmres(
    op: &dyn LinearOperator,
    prec: &dyn Preconditioner,
    b: &[f64],
    opts: &GmresOptions,
    truth: Option<&dyn Fn(&[f64]) -> f64>,
) -> Result<(Vec<f64>, SolveReport), KrylovError> {
    let n = op.dim();
    if b.len() != n {
        return Err(KrylovError::Dimension {
            context: "gmres rhs",
            expected: n,
            got: b.len(),
        });
    }
    let start = Instant::now();
    let mut stats = PrecStats::new();
    let mut report = SolveReport::new();

    let r0 = prec.apply(b, &mut stats)?;
    let beta = norm(&r0);
    if beta == 0.0 {
        let x = vec![0.0; n];
        report.converged = true;
        report.res = match truth {
            Some(t) => t(&x),
            None => 0.0,
        };
        report.absorb_stats(&stats);
        report.wall_seconds = start.elapsed().as_secs_f64();
        return Ok((x, report));
    }

    let mut basis: Vec<Vec<f64>> = vec![r0.iter().map(|v| v / beta).collect()];
    let mut r_cols: Vec<Vec<f64>> = Vec::new();
    let mut cs: Vec<f64> = Vec::new();
    let mut sn: Vec<f64> = Vec::new();
    let mut g = vec![0.0; opts.maxit + 1];
    g[0] = beta;

    let form_candidate = |r_cols: &[Vec<f64>], g: &[f64], basis: &[Vec<f64>], m: usize| {
        let mut y = vec![0.0; m];
        for i in (0..m).rev() {
            let mut s = g[i];
            for jj in i + 1..m {
                s -= r_cols[jj][i] * y[jj];
            }
            y[i] = s / r_cols[i][i];
        }
        let mut x = vec![0.0; n];
        for (jj, yj) in y.iter().enumerate() {
            for (xi, vi) in x.iter_mut().zip(&basis[jj]) {
                *xi += yj * vi;
            }
        }
        x
    };

    // Best candidate seen so far: with an inexact preconditioner the true
    // residual bottoms out and wiggles, so the last iterate is not
    // necessarily the most accurate one.
    let mut result: Option<(Vec<f64>, f64, bool)> = None;
    for j in 0..opts.maxit {
        let mut w = prec.apply(&op.apply(&basis[j]), &mut stats)?;
        let mut h = vec![0.0; j + 2];
        for (i, vi) in basis.iter().enumerate() {
            let hij = dot(&w, vi);
            for (wk, vk) in w.iter_mut().zip(vi) {
                *wk -= hij * vk;
            }
            h[i] = hij;
        }
        let h_next = norm(&w);
        let breakdown = h_next == 0.0;
        if !breakdown {
            basis.push(w.iter().map(|v| v / h_next).collect());
        }
        h[j + 1] = h_next;
        for i in 0..j {
            let (hi, hi1) = (h[i], h[i + 1]);
            h[i] = cs[i] * hi + sn[i] * hi1;
            h[i + 1] = -sn[i] * hi + cs[i] * hi1;
        }
        let denom = h[j].hypot(h[j + 1]);
        let (c, s) = if denom == 0.0 {
            (1.0, 0.0)
        } else {
            (h[j] / denom, h[j + 1] / denom)
        };
        h[j] = denom;
        h[j + 1] = 0.0;
        cs.push(c);
        sn.push(s);
        g[j + 1] = -s * g[j];
        g[j] *= c;
        r_cols.push(h);

        let est = g[j + 1].abs() / beta;
        report.history.push(est);
        report.outer_iters = j + 1;

        if breakdown || est <= opts.trigger * opts.tol {
            let candidate = form_candidate(&r_cols, &g, &basis, j + 1);
            let (res, ok) = match truth {
                Some(t) => {
                    let r = t(&candidate);
                    (r, r <= opts.tol)
                }
                None => (est, est <= opts.tol),
            };
            if ok || breakdown {
                result = Some((candidate, res, true));
                break;
            }
            if result.as_ref().is_none_or(|(_, best, _)| res < *best) {
                result = Some((candidate, res, false));
            }
        }
    }

    let (x, res, converged) = match result {
        Some(r) => r,
        None => {
            let m = report.outer_iters;
            let candidate = form_candidate(&r_cols, &g, &basis, m);
            let res = match truth {
                Some(t) => t(&candidate),
                None => report.history[m - 1],
            };
            (candidate, res, false)
        }
    };
    report.res = res;
    report.converged = converged;
    report.absorb_stats(&stats);
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok((x, report))
}

/// Preconditioned conjugate gradients from the zero vector. The stopping
/// test uses the recurrence residual; the reported residual is recomputed
/// from the returned iterate.
pub fn pcg(
    op: &dyn LinearOperator,
    prec: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    maxit: usize,
) -> Result<(Vec<f64>, SolveReport), KrylovError> {
    let n = op.dim();
    if b.len() != n {
        return Err(KrylovError::Dimension {
            context: "pcg rhs",
            expected: n,
            got: b.len(),
        });
    }
    let start = Instant::now();
    let mut report = SolveReport::new();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        report.converged = true;
        report.wall_seconds = start.elapsed().as_secs_f64();
        return Ok((x, report));
    }
    let mut r = b.to_vec();
    let mut z = prec(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=maxit {
        let ap = op.apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(KrylovError::NotSpd {
                value: pap,
                iteration: it,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = norm(&r) / bnorm;
        report.history.push(rel);
        report.outer_iters = it;
        if rel <= tol {
            report.converged = true;
            break;
        }
        z = prec(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let ax = op.apply(&x);
    let true_r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    report.res = norm(&true_r) / bnorm;
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok((x, report))
}

/// Block conjugate gradients over k right-hand sides with a single shared
/// step size, using the Frobenius inner product. For k = 1 the arithmetic
/// coincides with [`pcg`] operation for operation.
pub fn global_pcg(
    op: &dyn LinearOperator,
    prec: &dyn Fn(&BlockVector) -> BlockVector,
    b: &BlockVector,
    tol: f64,
    maxit: usize,
) -> Result<(BlockVector, SolveReport), KrylovError> {
    let n = op.dim();
    if b.n != n {
        return Err(KrylovError::Dimension {
            context: "global_pcg rhs",
            expected: n,
            got: b.n,
        });
    }
    let start = Instant::now();
    let mut report = SolveReport::new();
    let bnorm = b.frob_norm();
    let mut x = BlockVector::zeros(n, b.k);
    if bnorm == 0.0 {
        report.converged = true;
        report.wall_seconds = start.elapsed().as_secs_f64();
        return Ok((x, report));
    }
    let mut r = b.clone();
    let mut z = prec(&r);
    let mut p = z.clone();
    let mut rz = r.frob_dot(&z);
    for it in 1..=maxit {
        let ap = op.apply_block(&p);
        let pap = p.frob_dot(&ap);
        if pap <= 0.0 {
            return Err(KrylovError::NotSpd {
                value: pap,
                iteration: it,
            });
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rel = r.frob_norm() / bnorm;
        report.history.push(rel);
        report.outer_iters = it;
        if rel <= tol {
            report.converged = true;
            break;
        }
        z = prec(&r);
        let rz_new = r.frob_dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.xpby(&z, beta);
    }
    let ax = op.apply_block(&x);
    let mut diff = b.clone();
    diff.axpy(-1.0, &ax);
    report.res = diff.frob_norm() / bnorm;
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok((x, report))
}
