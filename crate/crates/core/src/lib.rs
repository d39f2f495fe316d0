//! Hybrid high-order (HHO) discretisation of incompressible miscible
//! displacement in porous media on generic polygonal meshes.
//!
//! The pressure is approximated with HHO unknowns of degree `2k` and the
//! solvent concentration with unknowns of degree `k`. Conservative Darcy
//! velocities and face fluxes are rebuilt from the discrete pressure and fed
//! to an upwind-stabilised advection-diffusion-reaction scheme, advanced in
//! time with Crank-Nicolson (or BDF) steps.
//!
//! The crate is `no_std` and only needs an allocator. File formats, the
//! configuration schema and the command-line front end live in the companion
//! `hhoflow` crate.
#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod basis;
pub mod concentration;
pub mod darcy;
mod error;
pub mod hho;
pub mod linsolve;
pub mod math;
pub mod mesh;
pub mod pressure;
pub mod quadrature;
pub mod simulator;

pub use error::{Error, Result};

pub use nalgebra::{Matrix2, Point2, Vector2};

/// Symmetric 2x2 tensor evaluated at a point (diffusivities, permeabilities).
pub type Tensor2 = Matrix2<f64>;
