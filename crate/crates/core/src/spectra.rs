//! Dense spectral analysis of the preconditioned augmented operator.
//!
//! Everything here works on the block 2x2 partitioning. The analysis form of
//! the preconditioner,
//!
//!   P = [ M   (1 - g/a) B' ]        M = A2 + gamma B' inv(Q) B
//!       [ 0   -inv(alpha) Q ]
//!
//! differs from the applied one only by the sign of the pressure block; the
//! sign flip leaves the Krylov iteration unchanged but makes inv(P) Abar
//! similar to a symmetric positive definite matrix, so its spectrum is real
//! and positive. Velocity fields in the kernel of B are fixed points, which
//! pins a large eigenvalue cluster at exactly one; every other eigenvalue
//! solves lambda^2 - b lambda + c = 0 with coefficients built from the
//! Rayleigh quotients a = u'A2u/u'u and q = u'B'inv(Q)Bu/u'u of its
//! eigenvector, and is enclosed by bounds computed from the extreme
//! eigenvalues of A2 and B'inv(Q)B.

use nalgebra::{DMatrix, Schur};
use thiserror::Error;

use crate::alprec::AugParams;
use crate::csr::CsrMatrix;
use crate::stokes::{AssemblyError, Stokes2x2System};

/// Largest total dimension accepted for dense analysis.
pub const MAX_DENSE: usize = 3000;

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("problem too large for dense analysis: {n} unknowns exceeds {max}")]
    TooLarge { n: usize, max: usize },
    #[error("constraint block is rank deficient")]
    RankDeficient,
    #[error("eigenvalue iteration failed to converge")]
    EigFailure,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

/// Rayleigh-quotient sample for one non-unit real eigenvalue.
#[derive(Debug, Clone)]
pub struct AqSample {
    pub lambda: f64,
    pub a: f64,
    pub q: f64,
    pub b: f64,
    pub c: f64,
    /// |lambda^2 - b lambda + c|
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub n_u: usize,
    pub n_p: usize,
    /// (real, imaginary) pairs in Schur order.
    pub eigenvalues: Vec<(f64, f64)>,
    pub max_imag: f64,
    pub max_abs: f64,
    pub min_real: f64,
    pub max_real: f64,
    /// Number of eigenvalue clusters after merging relative gaps below 1e-6.
    pub distinct_count: usize,
    /// Eigenvalues within 1e-6 of one.
    pub multiplicity_one: usize,
    pub lambda1_bound: f64,
    pub lambda2_bound: f64,
    /// Lower bound recomputed with the smallest nonzero eigenvalue of
    /// B' inv(Q) B in place of the (numerically zero) smallest one.
    pub lambda1_sharp: f64,
    pub bounds_hold: bool,
    /// Condition number of the recovered eigenvector basis.
    pub eigvec_condition: f64,
    pub a_q_samples: Vec<AqSample>,
}

fn dense_of(m: &CsrMatrix) -> DMatrix<f64> {
    let d = m.to_dense();
    DMatrix::from_row_slice(d.rows, d.cols, &d.data)
}

/// Forms inv(P) Abar densely, rejecting oversized or rank-deficient inputs.
pub fn assemble_dense_preconditioned(
    sys: &Stokes2x2System,
    params: &AugParams,
) -> Result<DMatrix<f64>, SpectraError> {
    params
        .validate()
        .map_err(|e| SpectraError::InvalidParams(e.to_string()))?;
    let n = sys.total_dim();
    if n > MAX_DENSE {
        return Err(SpectraError::TooLarge { n, max: MAX_DENSE });
    }
    let (nu, np) = (sys.n_u, sys.n_p);
    let b = dense_of(&sys.b);
    let bbt = &b * b.transpose();
    let bbt_eigs = bbt.symmetric_eigenvalues();
    let bbt_max = bbt_eigs.iter().cloned().fold(0.0f64, f64::max);
    let bbt_min = bbt_eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    if bbt_max <= 0.0 || bbt_min <= 1e-12 * bbt_max {
        return Err(SpectraError::RankDeficient);
    }
    let q = sys.q_diag(params.q_choice)?;
    let a2 = dense_of(&sys.a2);
    let mut b_scaled = b.clone();
    for k in 0..np {
        let s = params.gamma / q[k];
        for j in 0..nu {
            b_scaled[(k, j)] *= s;
        }
    }
    let m = &a2 + b.transpose() * &b_scaled;

    let mut abar = DMatrix::zeros(n, n);
    abar.view_mut((0, 0), (nu, nu)).copy_from(&m);
    abar.view_mut((0, nu), (nu, np)).copy_from(&b.transpose());
    abar.view_mut((nu, 0), (np, nu)).copy_from(&b);

    let coef = 1.0 - params.gamma / params.alpha;
    let mut p = DMatrix::zeros(n, n);
    p.view_mut((0, 0), (nu, nu)).copy_from(&m);
    p.view_mut((0, nu), (nu, np))
        .copy_from(&(b.transpose() * coef));
    for k in 0..np {
        p[(nu + k, nu + k)] = -q[k] / params.alpha;
    }
    p.lu().solve(&abar).ok_or(SpectraError::EigFailure)
}

/// Real eigenvector of the quasi-triangular factor for the eigenvalue at
/// 1x1 block position k, transformed back through z.
fn schur_eigenvector(z: &DMatrix<f64>, t: &DMatrix<f64>, k: usize, lambda: f64) -> Vec<f64> {
    let n = t.nrows();
    let smallnum = f64::EPSILON * t.amax().max(1e-300);
    let mut y = vec![0.0; k + 1];
    y[k] = 1.0;
    let mut i = k as isize - 1;
    while i >= 0 {
        let ii = i as usize;
        let in_block = ii > 0 && t[(ii, ii - 1)] != 0.0;
        if in_block {
            let r0: f64 = -(ii + 1..=k).map(|j| t[(ii - 1, j)] * y[j]).sum::<f64>();
            let r1: f64 = -(ii + 1..=k).map(|j| t[(ii, j)] * y[j]).sum::<f64>();
            let t00 = t[(ii - 1, ii - 1)] - lambda;
            let t01 = t[(ii - 1, ii)];
            let t10 = t[(ii, ii - 1)];
            let t11 = t[(ii, ii)] - lambda;
            let mut det = t00 * t11 - t01 * t10;
            if det.abs() < smallnum * smallnum {
                det = if det >= 0.0 {
                    smallnum * smallnum
                } else {
                    -smallnum * smallnum
                };
            }
            y[ii - 1] = (r0 * t11 - t01 * r1) / det;
            y[ii] = (t00 * r1 - t10 * r0) / det;
            i -= 2;
        } else {
            let r: f64 = -(ii + 1..=k).map(|j| t[(ii, j)] * y[j]).sum::<f64>();
            let mut piv = t[(ii, ii)] - lambda;
            if piv.abs() < smallnum {
                piv = if piv >= 0.0 { smallnum } else { -smallnum };
            }
            y[ii] = r / piv;
            i -= 1;
        }
    }
    let mut v = vec![0.0; n];
    for (j, &yj) in y.iter().enumerate() {
        if yj != 0.0 {
            for r in 0..n {
                v[r] += z[(r, j)] * yj;
            }
        }
    }
    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nrm > 0.0 {
        for x in &mut v {
            *x /= nrm;
        }
    }
    v
}

/// Computes the full spectral report for the preconditioned operator.
pub fn verify_theorem(
    sys: &Stokes2x2System,
    params: &AugParams,
) -> Result<SpectralReport, SpectraError> {
    let t_full = assemble_dense_preconditioned(sys, params)?;
    let n = t_full.nrows();
    let (nu, np) = (sys.n_u, sys.n_p);
    let schur = Schur::try_new(t_full, 1e-12, 100_000).ok_or(SpectraError::EigFailure)?;
    let (z, t) = schur.unpack();

    let mut eigenvalues: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut real_positions: Vec<(usize, f64)> = Vec::new();
    let mut k = 0;
    while k < n {
        if k + 1 < n && t[(k + 1, k)] != 0.0 {
            let (a, b, c, d) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k)], t[(k + 1, k + 1)]);
            let tr = a + d;
            let det = a * d - b * c;
            let disc = tr * tr / 4.0 - det;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                eigenvalues.push((tr / 2.0 + sq, 0.0));
                eigenvalues.push((tr / 2.0 - sq, 0.0));
            } else {
                let im = (-disc).sqrt();
                eigenvalues.push((tr / 2.0, im));
                eigenvalues.push((tr / 2.0, -im));
            }
            k += 2;
        } else {
            let lam = t[(k, k)];
            eigenvalues.push((lam, 0.0));
            real_positions.push((k, lam));
            k += 1;
        }
    }

    let max_imag = eigenvalues.iter().fold(0.0f64, |m, e| m.max(e.1.abs()));
    let max_abs = eigenvalues
        .iter()
        .fold(0.0f64, |m, e| m.max(e.0.hypot(e.1)));
    let min_real = eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, e| m.min(e.0));
    let max_real = eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |m, e| m.max(e.0));

    let mut reals: Vec<f64> = eigenvalues.iter().map(|e| e.0).collect();
    reals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tau = 1e-6;
    let mut distinct_count = 1;
    for w in reals.windows(2) {
        if w[1] - w[0] > tau * w[0].abs().max(w[1].abs()) {
            distinct_count += 1;
        }
    }
    let multiplicity_one = eigenvalues
        .iter()
        .filter(|(re, im)| (re - 1.0).hypot(*im) <= 1e-6)
        .count();

    // Rayleigh-quotient samples and the eigenvector basis.
    let q = sys.q_diag(params.q_choice)?;
    let mut basis = DMatrix::zeros(n, real_positions.len());
    let mut a_q_samples = Vec::new();
    for (col, &(pos, lambda)) in real_positions.iter().enumerate() {
        let v = schur_eigenvector(&z, &t, pos, lambda);
        for r in 0..n {
            basis[(r, col)] = v[r];
        }
        if (lambda - 1.0).abs() <= 1e-6 {
            continue;
        }
        let u = &v[..nu];
        let uu: f64 = u.iter().map(|x| x * x).sum();
        if uu <= 1e-20 {
            continue;
        }
        let au = sys.a2.spmv(u).expect("A2 dims");
        let a_quot = u.iter().zip(&au).map(|(x, y)| x * y).sum::<f64>() / uu;
        let bu = sys.b.spmv(u).expect("B dims");
        let q_quot = bu
            .iter()
            .zip(&q)
            .map(|(t, qk)| t * t / qk)
            .sum::<f64>()
            / uu;
        let denom = a_quot + params.gamma * q_quot;
        let b_coef = (a_quot + params.alpha * q_quot) / denom;
        let c_coef = params.alpha * q_quot / denom;
        let residual = (lambda * lambda - b_coef * lambda + c_coef).abs();
        a_q_samples.push(AqSample {
            lambda,
            a: a_quot,
            q: q_quot,
            b: b_coef,
            c: c_coef,
            residual,
        });
    }
    let eigvec_condition = if basis.ncols() >= 2 {
        let sv = basis.singular_values();
        let smax = sv.iter().cloned().fold(0.0f64, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if smin > 0.0 {
            smax / smin
        } else {
            f64::INFINITY
        }
    } else {
        1.0
    };

    // Enclosure from the extreme eigenvalues of A2 and S = B' inv(Q) B.
    let b_dense = dense_of(&sys.b);
    let mut b_q = b_dense.clone();
    for k in 0..np {
        for j in 0..nu {
            b_q[(k, j)] /= q[k];
        }
    }
    let s = b_dense.transpose() * b_q;
    let s_sym = (&s + s.transpose()) * 0.5;
    let s_eigs = s_sym.symmetric_eigenvalues();
    let s_max = s_eigs.iter().cloned().fold(0.0f64, f64::max);
    let s_min = s_eigs.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
    let s_min_pos = s_eigs
        .iter()
        .cloned()
        .filter(|&v| v > 1e-10 * s_max)
        .fold(f64::INFINITY, f64::min);
    let a2_dense = dense_of(&sys.a2);
    let a2_sym = (&a2_dense + a2_dense.transpose()) * 0.5;
    let a_eigs = a2_sym.symmetric_eigenvalues();
    let a_max = a_eigs.iter().cloned().fold(0.0f64, f64::max);
    let a_min = a_eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let (gamma, alpha) = (params.gamma, params.alpha);
    let lambda1_bound = 2.0 * s_min / (a_max + (1.0 + alpha - gamma) * s_max);
    let lambda2_bound = 2.0 * alpha * s_max / (a_min + (alpha - gamma) * s_min);
    let lambda1_sharp = 2.0 * s_min_pos / (a_max + (1.0 + alpha - gamma) * s_max);
    let slack = 1e-8;
    let bounds_hold = min_real >= lambda1_bound - slack * lambda1_bound.abs().max(1.0)
        && max_real <= lambda2_bound + slack * lambda2_bound.abs().max(1.0);

    Ok(SpectralReport {
        n_u: nu,
        n_p: np,
        eigenvalues,
        max_imag,
        max_abs,
        min_real,
        max_real,
        distinct_count,
        multiplicity_one,
        lambda1_bound,
        lambda2_bound,
        lambda1_sharp,
        bounds_hold,
        eigvec_condition,
        a_q_samples,
    })
}

/// Renders the eigenvalues as a two-column CSV with header `re,im`.
pub fn eigenvalues_csv(report: &SpectralReport) -> String {
    let mut out = String::from("re,im\n");
    for (re, im) in &report.eigenvalues {
        out.push_str(&format!("{re},{im}\n"));
    }
    out
}
