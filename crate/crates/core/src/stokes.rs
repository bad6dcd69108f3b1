//! Q2-Q1 Taylor-Hood discretization of the Stokes problem on structured
//! rectangular grids.
//!
//! Two geometries are built in: the lid-driven cavity on (-1,1)^2 and the
//! backward-facing step channel on (-1,5)x(-1,1) with the quadrant
//! (-1,0)x(-1,0) removed. Cells are squares of width 2^(1-level). Velocity
//! components are discretized with biquadratic elements on the once-refined
//! node grid, pressure with bilinears on the cell-corner grid, and all
//! integrals use 3x3 Gauss quadrature, which is exact for these integrands on
//! axis-aligned squares.
//!
//! Dirichlet conditions are eliminated: boundary rows and columns are removed
//! and their lifting contributions moved to the right-hand side, keeping the
//! velocity Laplacian symmetric positive definite. The cavity prescribes a
//! leaky lid (u_x = 1 on the top edge, corners included) and, being fully
//! Dirichlet, pins the first pressure unknown to restore a full-rank
//! constraint block. The channel prescribes the parabolic inflow
//! u_x = y(1 - y) on the inlet, no-slip on walls, and a natural outflow on
//! the right edge, which keeps the constraint block full rank without
//! pinning.

use thiserror::Error;

use crate::csr::{sum_duplicate_triplets, CsrMatrix, SparseError};
use crate::rng::Xorshift64Star;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("grid too coarse: level {level} leaves the pressure space degenerate, need level >= 2")]
    GridTooCoarse { level: u32 },
    #[error("nonpositive pressure mass entry {index}: {value}")]
    NonPositiveMass { index: usize, value: f64 },
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// Built-in problem geometries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Lid-driven cavity, (-1,1)^2.
    Cavity,
    /// Backward-facing step channel, (-1,5)x(-1,1) minus (-1,0)x(-1,0).
    Channel,
}

impl Domain {
    pub fn label(&self) -> &'static str {
        match self {
            Domain::Cavity => "cavity",
            Domain::Channel => "step",
        }
    }
}

/// Structured grid of square cells with an activity mask.
#[derive(Debug, Clone)]
pub struct Grid {
    pub domain: Domain,
    pub level: u32,
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    active: Vec<bool>,
}

impl Grid {
    pub fn new(domain: Domain, level: u32) -> Result<Grid, AssemblyError> {
        if level < 2 {
            return Err(AssemblyError::GridTooCoarse { level });
        }
        let h = 2.0_f64.powi(1 - level as i32);
        let cells = 1usize << level; // cells across a width-2 edge
        let (nx, ny) = match domain {
            Domain::Cavity => (cells, cells),
            Domain::Channel => (3 * cells, cells),
        };
        let mut active = vec![true; nx * ny];
        if domain == Domain::Channel {
            let cut = cells / 2;
            for cy in 0..cut {
                for cx in 0..cut {
                    active[cy * nx + cx] = false;
                }
            }
        }
        Ok(Grid {
            domain,
            level,
            nx,
            ny,
            h,
            active,
        })
    }

    #[inline]
    pub fn is_active(&self, cx: usize, cy: usize) -> bool {
        self.active[cy * self.nx + cx]
    }

    pub fn active_cells(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn label(&self) -> String {
        format!("{}-l{}", self.domain.label(), self.level)
    }
}

/// Block 3x3 Stokes system with the velocity components kept apart:
/// rows (A u_x + Bx' p; A u_y + By' p; Bx u_x + By u_y) = (f_x; f_y; g).
#[derive(Debug, Clone)]
pub struct Stokes3x3System {
    pub a: CsrMatrix,
    pub bx: CsrMatrix,
    pub by: CsrMatrix,
    pub f_x: Vec<f64>,
    pub f_y: Vec<f64>,
    pub g: Vec<f64>,
    pub n: usize,
    pub n_p: usize,
    /// Lumped pressure mass diagonal (the per-node area share).
    pub mass_diag: Vec<f64>,
    /// Position, in the pre-pinning pressure numbering, of the pressure
    /// unknown fixed to zero; `None` when no pinning was needed.
    pub pinned_pressure: Option<usize>,
    /// Known solution when the right-hand side was manufactured.
    pub x_star: Option<Vec<f64>>,
    pub label: String,
}

impl Stokes3x3System {
    pub fn total_dim(&self) -> usize {
        2 * self.n + self.n_p
    }

    /// Applies the unaugmented saddle-point operator to (u_x; u_y; p).
    pub fn apply_original(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.total_dim(), "operand length mismatch");
        let n = self.n;
        let (vx, rest) = v.split_at(n);
        let (vy, p) = rest.split_at(n);
        let mut out_x = self.a.spmv(vx).expect("A dims");
        let bxp = self.bx.spmv_transpose(p).expect("Bx dims");
        for (o, t) in out_x.iter_mut().zip(&bxp) {
            *o += t;
        }
        let mut out_y = self.a.spmv(vy).expect("A dims");
        let byp = self.by.spmv_transpose(p).expect("By dims");
        for (o, t) in out_y.iter_mut().zip(&byp) {
            *o += t;
        }
        let mut out_p = self.bx.spmv(vx).expect("Bx dims");
        let byvy = self.by.spmv(vy).expect("By dims");
        for (o, t) in out_p.iter_mut().zip(&byvy) {
            *o += t;
        }
        let mut out = out_x;
        out.extend_from_slice(&out_y);
        out.extend_from_slice(&out_p);
        out
    }

    pub fn original_rhs(&self) -> Vec<f64> {
        let mut b = self.f_x.clone();
        b.extend_from_slice(&self.f_y);
        b.extend_from_slice(&self.g);
        b
    }

    pub fn q_diag(&self, choice: QChoice) -> Result<Vec<f64>, AssemblyError> {
        build_q(&self.mass_diag, choice)
    }

    /// Replaces the right-hand side by one manufactured from a seeded random
    /// solution vector, recording that solution for error reporting.
    pub fn set_manufactured_rhs(&mut self, seed: u64) {
        let (rhs, x_star) = manufacture_rhs(self, seed);
        let n = self.n;
        self.f_x = rhs[..n].to_vec();
        self.f_y = rhs[n..2 * n].to_vec();
        self.g = rhs[2 * n..].to_vec();
        self.x_star = Some(x_star);
    }
}

/// Block 2x2 form with both velocity components in one slot:
/// rows (A2 u + B' p; B u) = (f; g), A2 = blockdiag(A, A), B = [Bx By].
#[derive(Debug, Clone)]
pub struct Stokes2x2System {
    pub a2: CsrMatrix,
    pub b: CsrMatrix,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub n_u: usize,
    pub n_p: usize,
    pub mass_diag: Vec<f64>,
    pub pinned_pressure: Option<usize>,
    pub x_star: Option<Vec<f64>>,
    pub label: String,
}

impl Stokes2x2System {
    pub fn total_dim(&self) -> usize {
        self.n_u + self.n_p
    }

    pub fn apply_original(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.total_dim(), "operand length mismatch");
        let (u, p) = v.split_at(self.n_u);
        let mut out_u = self.a2.spmv(u).expect("A2 dims");
        let btp = self.b.spmv_transpose(p).expect("B dims");
        for (o, t) in out_u.iter_mut().zip(&btp) {
            *o += t;
        }
        let out_p = self.b.spmv(u).expect("B dims");
        let mut out = out_u;
        out.extend_from_slice(&out_p);
        out
    }

    pub fn original_rhs(&self) -> Vec<f64> {
        let mut b = self.f.clone();
        b.extend_from_slice(&self.g);
        b
    }

    pub fn q_diag(&self, choice: QChoice) -> Result<Vec<f64>, AssemblyError> {
        build_q(&self.mass_diag, choice)
    }

    pub fn set_manufactured_rhs(&mut self, seed: u64) {
        let (rhs, x_star) = manufacture_rhs_2x2(self, seed);
        self.f = rhs[..self.n_u].to_vec();
        self.g = rhs[self.n_u..].to_vec();
        self.x_star = Some(x_star);
    }
}

/// Diagonal weight matrix used by the augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QChoice {
    Identity,
    PressureMassDiagonal,
}

/// Builds the diagonal of Q from the stored pressure mass diagonal.
pub fn build_q(mass_diag: &[f64], choice: QChoice) -> Result<Vec<f64>, AssemblyError> {
    match choice {
        QChoice::Identity => Ok(vec![1.0; mass_diag.len()]),
        QChoice::PressureMassDiagonal => {
            for (index, &value) in mass_diag.iter().enumerate() {
                if value <= 0.0 {
                    return Err(AssemblyError::NonPositiveMass { index, value });
                }
            }
            Ok(mass_diag.to_vec())
        }
    }
}

// 1D shape values on [-1, 1]: biquadratic (nodes -1, 0, 1) and bilinear.
fn q2(t: f64) -> [f64; 3] {
    [t * (t - 1.0) / 2.0, 1.0 - t * t, t * (t + 1.0) / 2.0]
}

fn dq2(t: f64) -> [f64; 3] {
    [t - 0.5, -2.0 * t, t + 0.5]
}

fn q1(t: f64) -> [f64; 2] {
    [(1.0 - t) / 2.0, (1.0 + t) / 2.0]
}

struct ElementMatrices {
    a: [[f64; 9]; 9],
    bx: [[f64; 9]; 4],
    by: [[f64; 9]; 4],
    /// Row sums of the local pressure mass matrix.
    mp_lumped: [f64; 4],
}

fn element_matrices(h: f64) -> ElementMatrices {
    let gp = [-(0.6_f64).sqrt(), 0.0, (0.6_f64).sqrt()];
    let gw = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    let det_j = (h / 2.0) * (h / 2.0);
    let scale = 2.0 / h; // reference-to-physical derivative factor
    let mut e = ElementMatrices {
        a: [[0.0; 9]; 9],
        bx: [[0.0; 9]; 4],
        by: [[0.0; 9]; 4],
        mp_lumped: [0.0; 4],
    };
    for qa in 0..3 {
        for qb in 0..3 {
            let (xi, eta) = (gp[qa], gp[qb]);
            let w = gw[qa] * gw[qb] * det_j;
            let (n2x, n2y) = (q2(xi), q2(eta));
            let (d2x, d2y) = (dq2(xi), dq2(eta));
            let (n1x, n1y) = (q1(xi), q1(eta));
            let mut gx = [0.0; 9];
            let mut gy = [0.0; 9];
            for dy in 0..3 {
                for dx in 0..3 {
                    let l = 3 * dy + dx;
                    gx[l] = d2x[dx] * scale * n2y[dy];
                    gy[l] = n2x[dx] * d2y[dy] * scale;
                }
            }
            let mut psi = [0.0; 4];
            for dy in 0..2 {
                for dx in 0..2 {
                    psi[2 * dy + dx] = n1x[dx] * n1y[dy];
                }
            }
            for i in 0..9 {
                for j in 0..9 {
                    e.a[i][j] += w * (gx[i] * gx[j] + gy[i] * gy[j]);
                }
            }
            for k in 0..4 {
                for j in 0..9 {
                    e.bx[k][j] -= w * psi[k] * gx[j];
                    e.by[k][j] -= w * psi[k] * gy[j];
                }
                e.mp_lumped[k] += w * psi[k];
            }
        }
    }
    e
}

/// Cells (as 1D indices) that contain the fine-grid coordinate `i`,
/// including out-of-range positions so callers can detect boundaries.
fn fine_candidates(i: i64) -> Vec<i64> {
    let mut v = Vec::with_capacity(2);
    for c in (i - 2).div_euclid(2)..=i.div_euclid(2) {
        if 2 * c <= i && i <= 2 * c + 2 {
            v.push(c);
        }
    }
    v
}

struct VelocityNodes {
    free_id: Vec<Option<usize>>,
    dirichlet: Vec<bool>,
    ux_d: Vec<f64>,
    uy_d: Vec<f64>,
    n: usize,
}

fn classify_velocity(grid: &Grid) -> VelocityNodes {
    let (nx, ny) = (grid.nx as i64, grid.ny as i64);
    let (nvx, nvy) = (2 * grid.nx + 1, 2 * grid.ny + 1);
    let total = nvx * nvy;
    let mut free_id = vec![None; total];
    let mut dirichlet = vec![false; total];
    let mut ux_d = vec![0.0; total];
    let uy_d = vec![0.0; total];
    let mut n = 0usize;
    for iy in 0..nvy {
        for ix in 0..nvx {
            let lin = iy * nvx + ix;
            let mut present = false;
            let mut boundary = false;
            for &cx in &fine_candidates(ix as i64) {
                for &cy in &fine_candidates(iy as i64) {
                    if cx < 0 || cy < 0 || cx >= nx || cy >= ny {
                        boundary = true;
                    } else if grid.is_active(cx as usize, cy as usize) {
                        present = true;
                    } else {
                        boundary = true;
                    }
                }
            }
            if !present {
                continue;
            }
            if boundary {
                let on_outflow = grid.domain == Domain::Channel
                    && ix == 2 * grid.nx
                    && iy > 0
                    && iy < 2 * grid.ny;
                if !on_outflow {
                    dirichlet[lin] = true;
                    match grid.domain {
                        Domain::Cavity => {
                            if iy == 2 * grid.ny {
                                ux_d[lin] = 1.0; // leaky lid
                            }
                        }
                        Domain::Channel => {
                            if ix == 0 {
                                let y = -1.0 + iy as f64 * grid.h / 2.0;
                                ux_d[lin] = y * (1.0 - y);
                            }
                        }
                    }
                    continue;
                }
            }
            free_id[lin] = Some(n);
            n += 1;
        }
    }
    VelocityNodes {
        free_id,
        dirichlet,
        ux_d,
        uy_d,
        n,
    }
}

struct PressureNodes {
    kept_id: Vec<Option<usize>>,
    n_p: usize,
    pinned: Option<usize>,
}

fn classify_pressure(grid: &Grid) -> PressureNodes {
    let (nx, ny) = (grid.nx, grid.ny);
    let (npx, npy) = (nx + 1, ny + 1);
    let mut kept_id = vec![None; npx * npy];
    let pin_first = grid.domain == Domain::Cavity;
    let mut count = 0usize;
    let mut present_seen = 0usize;
    let mut pinned = None;
    for iy in 0..npy {
        for ix in 0..npx {
            let mut present = false;
            for cx in [ix.wrapping_sub(1), ix] {
                for cy in [iy.wrapping_sub(1), iy] {
                    if cx < nx && cy < ny && grid.is_active(cx, cy) {
                        present = true;
                    }
                }
            }
            if !present {
                continue;
            }
            if pin_first && present_seen == 0 {
                pinned = Some(0);
            } else {
                kept_id[iy * npx + ix] = Some(count);
                count += 1;
            }
            present_seen += 1;
        }
    }
    PressureNodes {
        kept_id,
        n_p: count,
        pinned,
    }
}

/// Assembles the block 3x3 system with Dirichlet elimination.
pub fn assemble(grid: &Grid) -> Result<Stokes3x3System, AssemblyError> {
    let e = element_matrices(grid.h);
    let vel = classify_velocity(grid);
    let pre = classify_pressure(grid);
    let nvx = 2 * grid.nx + 1;
    let npx = grid.nx + 1;
    let (n, n_p) = (vel.n, pre.n_p);

    let mut tri_a: Vec<(usize, usize, f64)> = Vec::new();
    let mut tri_bx: Vec<(usize, usize, f64)> = Vec::new();
    let mut tri_by: Vec<(usize, usize, f64)> = Vec::new();
    let mut f_x = vec![0.0; n];
    let mut f_y = vec![0.0; n];
    let mut g = vec![0.0; n_p];
    let mut mass_diag = vec![0.0; n_p];

    for cy in 0..grid.ny {
        for cx in 0..grid.nx {
            if !grid.is_active(cx, cy) {
                continue;
            }
            let mut vg = [0usize; 9];
            for dy in 0..3 {
                for dx in 0..3 {
                    vg[3 * dy + dx] = (2 * cy + dy) * nvx + (2 * cx + dx);
                }
            }
            let mut pg = [0usize; 4];
            for dy in 0..2 {
                for dx in 0..2 {
                    pg[2 * dy + dx] = (cy + dy) * npx + (cx + dx);
                }
            }
            for i in 0..9 {
                let Some(fi) = vel.free_id[vg[i]] else {
                    continue;
                };
                for j in 0..9 {
                    let gj = vg[j];
                    if let Some(fj) = vel.free_id[gj] {
                        tri_a.push((fi, fj, e.a[i][j]));
                    } else if vel.dirichlet[gj] {
                        f_x[fi] -= e.a[i][j] * vel.ux_d[gj];
                        f_y[fi] -= e.a[i][j] * vel.uy_d[gj];
                    }
                }
            }
            for k in 0..4 {
                let Some(rk) = pre.kept_id[pg[k]] else {
                    continue;
                };
                mass_diag[rk] += e.mp_lumped[k];
                for j in 0..9 {
                    let gj = vg[j];
                    if let Some(fj) = vel.free_id[gj] {
                        tri_bx.push((rk, fj, e.bx[k][j]));
                        tri_by.push((rk, fj, e.by[k][j]));
                    } else if vel.dirichlet[gj] {
                        g[rk] -= e.bx[k][j] * vel.ux_d[gj] + e.by[k][j] * vel.uy_d[gj];
                    }
                }
            }
        }
    }

    sum_duplicate_triplets(&mut tri_a);
    sum_duplicate_triplets(&mut tri_bx);
    sum_duplicate_triplets(&mut tri_by);
    Ok(Stokes3x3System {
        a: CsrMatrix::from_triplets(n, n, tri_a)?,
        bx: CsrMatrix::from_triplets(n_p, n, tri_bx)?,
        by: CsrMatrix::from_triplets(n_p, n, tri_by)?,
        f_x,
        f_y,
        g,
        n,
        n_p,
        mass_diag,
        pinned_pressure: pre.pinned,
        x_star: None,
        label: grid.label(),
    })
}

/// Repartitions a block 3x3 system into block 2x2 form. The unknown ordering
/// (u_x; u_y; p) is unchanged, so both systems share solutions verbatim.
pub fn to_2x2(sys: &Stokes3x3System) -> Stokes2x2System {
    let n = sys.n;
    // A2 = blockdiag(A, A)
    let mut row_ptr = Vec::with_capacity(2 * n + 1);
    let mut col_idx = Vec::with_capacity(2 * sys.a.nnz());
    let mut values = Vec::with_capacity(2 * sys.a.nnz());
    row_ptr.push(0);
    for shift in [0usize, n] {
        for i in 0..n {
            let (cols, vals) = sys.a.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                col_idx.push(c + shift);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
    }
    let a2 = CsrMatrix {
        rows: 2 * n,
        cols: 2 * n,
        row_ptr,
        col_idx,
        values,
    };
    // B = [Bx By]
    let mut row_ptr = Vec::with_capacity(sys.n_p + 1);
    let mut col_idx = Vec::with_capacity(sys.bx.nnz() + sys.by.nnz());
    let mut values = Vec::with_capacity(sys.bx.nnz() + sys.by.nnz());
    row_ptr.push(0);
    for k in 0..sys.n_p {
        let (cols, vals) = sys.bx.row(k);
        for (&c, &v) in cols.iter().zip(vals) {
            col_idx.push(c);
            values.push(v);
        }
        let (cols, vals) = sys.by.row(k);
        for (&c, &v) in cols.iter().zip(vals) {
            col_idx.push(c + n);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
    }
    let b = CsrMatrix {
        rows: sys.n_p,
        cols: 2 * n,
        row_ptr,
        col_idx,
        values,
    };
    let mut f = sys.f_x.clone();
    f.extend_from_slice(&sys.f_y);
    Stokes2x2System {
        a2,
        b,
        f,
        g: sys.g.clone(),
        n_u: 2 * n,
        n_p: sys.n_p,
        mass_diag: sys.mass_diag.clone(),
        pinned_pressure: sys.pinned_pressure,
        x_star: sys.x_star.clone(),
        label: sys.label.clone(),
    }
}

/// Draws a solution vector uniformly from [-1,1]^N with the given seed and
/// returns (rhs, x_star) where rhs applies the unaugmented operator to it.
pub fn manufacture_rhs(sys: &Stokes3x3System, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = Xorshift64Star::new(seed);
    let mut x_star = vec![0.0; sys.total_dim()];
    rng.fill_unit(&mut x_star);
    let rhs = sys.apply_original(&x_star);
    (rhs, x_star)
}

pub fn manufacture_rhs_2x2(sys: &Stokes2x2System, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = Xorshift64Star::new(seed);
    let mut x_star = vec![0.0; sys.total_dim()];
    rng.fill_unit(&mut x_star);
    let rhs = sys.apply_original(&x_star);
    (rhs, x_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn dmat(m: &CsrMatrix) -> DMatrix<f64> {
        let d = m.to_dense();
        DMatrix::from_row_slice(d.rows, d.cols, &d.data)
    }

    fn cavity(level: u32) -> Stokes3x3System {
        assemble(&Grid::new(Domain::Cavity, level).unwrap()).unwrap()
    }

    fn step(level: u32) -> Stokes3x3System {
        assemble(&Grid::new(Domain::Channel, level).unwrap()).unwrap()
    }

    #[test]
    fn coarse_levels_are_rejected() {
        assert!(matches!(
            Grid::new(Domain::Cavity, 1),
            Err(AssemblyError::GridTooCoarse { level: 1 })
        ));
        assert!(Grid::new(Domain::Cavity, 2).is_ok());
    }

    #[test]
    fn cavity_counts_match_combinatorial_formula() {
        for level in 2..=4u32 {
            let sys = cavity(level);
            let side = 1usize << level;
            assert_eq!(sys.n, (2 * side - 1) * (2 * side - 1));
            assert_eq!(sys.n_p, (side + 1) * (side + 1) - 1);
            assert!(2 * sys.n > sys.n_p);
            assert_eq!(sys.pinned_pressure, Some(0));
        }
    }

    #[test]
    fn step_counts_are_stable() {
        let s2 = step(2);
        assert_eq!((s2.n, s2.n_p), (152, 61));
        assert_eq!(s2.pinned_pressure, None);
        let s3 = step(3);
        assert_eq!((s3.n, s3.n_p), (656, 209));
        assert_eq!(s3.total_dim(), 1521);
    }

    #[test]
    fn laplacian_is_symmetric() {
        for sys in [cavity(2), step(2)] {
            assert!(sys.a.max_asymmetry() <= 1e-12 * sys.a.max_abs());
        }
    }

    #[test]
    fn interior_laplacian_row_annihilates_constants() {
        // Cavity level 2: fine node (4,4) couples only to free nodes, so its
        // assembled row still sums to zero.
        let sys = cavity(2);
        let row = 3 * 7 + 3;
        let (_, vals) = sys.a.row(row);
        let sum: f64 = vals.iter().sum();
        assert!(sum.abs() <= 1e-12, "row sum {sum}");
    }

    #[test]
    fn interior_divergence_rows_annihilate_constant_fields() {
        // Pressure node (2,2) on the level-2 cavity touches only free
        // velocity nodes; a constant field is divergence free.
        let sys = cavity(2);
        let row = 2 * 5 + 2 - 1; // kept numbering skips the pinned node
        for b in [&sys.bx, &sys.by] {
            let (_, vals) = b.row(row);
            let sum: f64 = vals.iter().sum();
            assert!(sum.abs() <= 1e-13, "row sum {sum}");
        }
    }

    #[test]
    fn lumped_mass_matches_single_cell_quadrature() {
        // Interior pressure node: four cells contribute h^2/4 each.
        for level in [3u32, 4] {
            let sys = cavity(level);
            let h = 2.0_f64.powi(1 - level as i32);
            let side = (1usize << level) + 1;
            let interior = 2 * side + 2 - 1;
            assert!((sys.mass_diag[interior] - h * h).abs() <= 1e-12 * h * h);
        }
    }

    #[test]
    fn lumped_mass_totals_domain_area() {
        let c = cavity(3);
        let total: f64 = c.mass_diag.iter().sum();
        // Pinning removes one boundary node's share (h^2/4).
        let h = 0.25;
        assert!((total - (4.0 - h * h / 4.0)).abs() <= 0.05 * 4.0);
        let s = step(3);
        let total: f64 = s.mass_diag.iter().sum();
        assert!((total - 11.0).abs() <= 0.05 * 11.0);
        assert!(s.mass_diag.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn q_identity_is_all_ones() {
        let sys = cavity(2);
        let q = sys.q_diag(QChoice::Identity).unwrap();
        assert!(q.iter().all(|&v| v == 1.0));
        assert_eq!(q.len(), sys.n_p);
    }

    #[test]
    fn q_mass_rejects_nonpositive_entries() {
        let err = build_q(&[1.0, -0.5], QChoice::PressureMassDiagonal).unwrap_err();
        assert!(matches!(err, AssemblyError::NonPositiveMass { index: 1, .. }));
    }

    #[test]
    fn block_2x2_has_doubled_laplacian_and_concatenated_divergence() {
        let sys = cavity(2);
        let sys2 = to_2x2(&sys);
        assert_eq!(sys2.a2.nnz(), 2 * sys.a.nnz());
        let mut rng = Xorshift64Star::new(5);
        let mut ux = vec![0.0; sys.n];
        let mut uy = vec![0.0; sys.n];
        rng.fill_unit(&mut ux);
        rng.fill_unit(&mut uy);
        let mut u = ux.clone();
        u.extend_from_slice(&uy);
        let via_b = sys2.b.spmv(&u).unwrap();
        let bx = sys.bx.spmv(&ux).unwrap();
        let by = sys.by.spmv(&uy).unwrap();
        for i in 0..sys.n_p {
            let want = bx[i] + by[i];
            assert!((via_b[i] - want).abs() <= 1e-13 * want.abs().max(1.0));
        }
    }

    #[test]
    fn both_partitionings_solve_to_the_same_solution() {
        let sys = cavity(2);
        let sys2 = to_2x2(&sys);
        let nn = sys.total_dim();
        let mut full3 = DMatrix::zeros(nn, nn);
        for j in 0..nn {
            let mut e = vec![0.0; nn];
            e[j] = 1.0;
            let col = sys.apply_original(&e);
            for i in 0..nn {
                full3[(i, j)] = col[i];
            }
        }
        let mut full2 = DMatrix::zeros(nn, nn);
        for j in 0..nn {
            let mut e = vec![0.0; nn];
            e[j] = 1.0;
            let col = sys2.apply_original(&e);
            for i in 0..nn {
                full2[(i, j)] = col[i];
            }
        }
        let b = nalgebra::DVector::from_vec(sys.original_rhs());
        let x3 = full3.lu().solve(&b).unwrap();
        let x2 = full2.lu().solve(&b).unwrap();
        let diff = (&x3 - &x2).norm() / x3.norm();
        assert!(diff <= 1e-10, "solutions differ by {diff}");
    }

    #[test]
    fn constraint_block_has_full_rank() {
        // Smallest eigenvalue of B inv(A2) B' stays positive for both the
        // pinned cavity and the outflow channel.
        for sys in [cavity(2), step(2)] {
            let sys2 = to_2x2(&sys);
            let a2 = dmat(&sys2.a2);
            let b = dmat(&sys2.b);
            let chol = a2.cholesky().expect("A2 SPD");
            let s = &b * chol.solve(&b.transpose());
            let sym = (&s + s.transpose()) * 0.5;
            let eig = sym.symmetric_eigenvalues();
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = eig.iter().cloned().fold(0.0f64, f64::max);
            assert!(min > 1e-12 * max, "min {min} max {max}");
        }
    }

    #[test]
    fn manufactured_rhs_is_deterministic_and_consistent() {
        let sys = cavity(2);
        let (rhs_a, xs_a) = manufacture_rhs(&sys, 77);
        let (rhs_b, xs_b) = manufacture_rhs(&sys, 77);
        assert_eq!(rhs_a, rhs_b);
        assert_eq!(xs_a, xs_b);
        let (rhs_c, xs_c) = manufacture_rhs(&sys, 78);
        assert_ne!(xs_a, xs_c);
        assert_ne!(rhs_a, rhs_c);
        // residual of the recorded solution is identically zero
        let back = sys.apply_original(&xs_a);
        assert_eq!(back, rhs_a);
    }

    #[test]
    fn installed_manufactured_rhs_lands_in_the_system() {
        let mut sys = step(2);
        sys.set_manufactured_rhs(9);
        let (rhs, xs) = manufacture_rhs(&step(2), 9);
        assert_eq!(sys.original_rhs(), rhs);
        assert_eq!(sys.x_star.as_deref(), Some(xs.as_slice()));
    }
}
