//! Breakdown-robust incomplete Cholesky factorization of sparse SPD matrices
//! in emulated half precision, used as a preconditioner inside mixed-precision
//! iterative refinement to recover double-precision-accurate solutions.
//!
//! The pipeline: read or generate a matrix, symmetrically scale it with
//! l2-norm scaling, squeeze it into the factorization precision, compute a
//! level-based fill pattern, run the shifted incomplete Cholesky driver with
//! safe breakdown detection, and feed the factor to GMRES-IR or CG-IR.

pub mod experiment;
pub mod factorize;
pub mod halffloat;
pub mod krylov;
pub mod sparsecore;
pub mod symbolic;
