//! Anisotropic nonlocal elliptic operators with drift.
//!
//! The crate evaluates `L_K u + B_K(u, h)` pointwise and on lattices, computes
//! principal eigenpairs and the Donsker–Varadhan functional of the drifted
//! operator, and reconstructs a constant diffusion matrix and a drift from
//! energy data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundary_barriers;
pub mod discretize;
pub mod dv_functional;
pub mod eigen;
pub mod error;
pub mod function;
pub mod inverse_problem;
pub mod kernel_field;
pub mod nonlocal_ops;
pub mod optimize;
pub mod properties;
pub mod quadrature;

pub use error::{Error, Result};
pub use function::SmoothFunction;
pub use kernel_field::{AnisotropyField, EllipticityBounds, KernelSpec, SpdMatrix};
