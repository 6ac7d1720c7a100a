//! Small dense linear-algebra kernels: row-major matrices, pivoted LU,
//! column-pivoted QR, a Francis-QR eigensolver, the scaling-and-squaring
//! matrix exponential, characteristic polynomials, and a Lyapunov solver.
//!
//! Everything here is sized for the model dimensions used elsewhere in the
//! crate (matrices of order <= a few dozen); no blocking, no BLAS.

pub mod eig;
pub mod expm;
pub mod lu;
pub mod lyap;
pub mod mat;
pub mod poly;
pub mod qr;

pub use eig::{convergent_subspace, eigenvalues, eigenvector};
pub use expm::expm;
pub use lu::Lu;
pub use lyap::solve_lyapunov;
pub use mat::Mat;
pub use poly::{char_poly, eval_poly, poly_from_roots, poly_roots};
