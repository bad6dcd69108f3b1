//! Sparse saddle-point solver toolkit.
//!
//! Builds discrete Stokes systems in block 3x3 and block 2x2 form on
//! structured Q2-Q1 grids, solves them with unrestarted GMRES wrapped
//! around augmented-Lagrangian preconditioners (inner PCG or global PCG,
//! incomplete-Cholesky accelerated), and verifies the spectral properties
//! of the preconditioned operator with dense eigensolvers at small sizes.

#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod alprec;
pub mod block;
pub mod csr;
pub mod dense;
pub mod ichol;
pub mod krylov;
pub mod mm;
pub mod rng;
pub mod spectra;
pub mod stokes;
pub mod sysio;

pub use alprec::{
    apply_prec_2x2, apply_prec_3x3, build_augmented, build_augmented_2x2, solve_stokes,
    solve_stokes_2x2, AlError, AlPrec2, AlPrec3, Approach, AugParams, Augmented2, Augmented3,
    Direction, IcTarget, Strategy,
};
pub use block::BlockVector;
pub use csr::{diag_solve, diag_solve_block, CsrMatrix, SparseError};
pub use dense::DenseMatrix;
pub use ichol::{ict_factor, ict_factor_shifted, IcError, IcFactor};
pub use krylov::{
    gmres, global_pcg, pcg, GmresOptions, IdentityPrec, KrylovError, LinearOperator, PrecStats,
    Preconditioner, SolveReport,
};
pub use mm::{read_array, read_coordinate, write_array, write_coordinate, MmError};
pub use rng::Xorshift64Star;
pub use spectra::{
    assemble_dense_preconditioned, eigenvalues_csv, verify_theorem, AqSample, SpectraError,
    SpectralReport, MAX_DENSE,
};
pub use stokes::{
    assemble, build_q, manufacture_rhs, manufacture_rhs_2x2, to_2x2, AssemblyError, Domain, Grid,
    QChoice, Stokes2x2System, Stokes3x3System,
};
pub use sysio::{export_system, export_system_2x2, import_system, ImportedSystem, SysIoError};
