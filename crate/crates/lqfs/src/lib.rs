//! Planning, stability analysis, and simulation for many-server service
//! systems on tree-structured compatibility graphs, operated under the
//! longest-queue/freest-server routing rule.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: the system specification (classes, pools, activity tree),
//!   validation, JSON wire format, and structural transforms;
//! - [`spp`]: the static planning problem, its dual prices, and the
//!   heavy-traffic arrival scaling;
//! - [`linstab`]: load-balancing and drift matrices with their spectral
//!   stability verdicts;
//! - [`fluid`]: deterministic fluid trajectories (nonlinear and linearized)
//!   and diffusion sample paths;
//! - [`sim`]: finite-r continuous-time Markov chain simulation;
//! - [`linalg`], [`stats`], [`rng`]: supporting numerics.
//!
//! All numeric kernels are generic over the scalar type through
//! [`scalar::Real`]; the aliases below fix f64 (primary) and f32 variants.

pub mod error;
pub mod fluid;
pub mod linalg;
pub mod linstab;
pub mod model;
pub mod registry;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod spp;
pub mod stats;

pub use error::{Error, Result};

/// Double-precision system specification (the default choice).
pub type SystemSpec64 = model::SystemSpec<f64>;
/// Single-precision system specification.
pub type SystemSpec32 = model::SystemSpec<f32>;
/// Double-precision dense matrix.
pub type Mat64 = linalg::Mat<f64>;
/// Single-precision dense matrix.
pub type Mat32 = linalg::Mat<f32>;
