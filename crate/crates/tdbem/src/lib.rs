//! Space-time Galerkin boundary element solver for the 2D wave equation
//! with a Neumann boundary condition imposed on an open arc or a closed
//! polygonal curve.
//!
//! The discrete unknown is the jump of the normal derivative of the
//! solution across the boundary, expanded in piecewise-linear hat
//! functions in space and piecewise-linear causal ramps in time. The
//! Galerkin matrix is block lower triangular in time and is solved by
//! block forward substitution. Residual-based space-time error
//! indicators drive adaptive bisection of either the spatial mesh or the
//! time grid.

pub mod adapt;
pub mod assembly;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod kernel;
pub mod mesh;
pub mod quadrature;
pub mod report;
pub mod solver;

pub use error::{Error, Result};
