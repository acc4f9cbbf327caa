//! Built-in problems.

pub mod affine;
pub mod laplace;
pub mod rte;
