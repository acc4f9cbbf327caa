//! Coarse-proxy reduced basis method for parameterized dense integral
//! equations.
//!
//! The offline stage ([`offline::run_offline`]) ranks the parameter samples
//! with cheap coarse-model solves, fine-solves only the selected skeleton
//! parameters, builds an orthonormal reduced basis from them, and fits a
//! mixing matrix that interpolates every operator from the skeleton
//! operators using a few sampled operator columns. The online stage
//! ([`online::reduced_solve`]) then solves each sample in the reduced space.
//!
//! Problems plug in through [`oracle::ProblemOracle`]; three are built in:
//! a Laplace double-layer boundary integral equation on star-shaped domains,
//! a radiative transport integral equation on the unit square, and a
//! synthetic affine operator family used for exactness checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod drivers;
pub mod error;
pub mod model_io;
pub mod numerics;
pub mod offline;
pub mod online;
pub mod oracle;
pub mod pipeline;
pub mod quadrature;

pub use error::{RbError, Result};
pub use numerics::{Matrix, Vector};
pub use offline::{run_offline, OfflineOptions, ReducedModel, Thresholds};
pub use online::{batch_evaluate, reduced_solve, ErrorReport};
pub use oracle::{OperatorHandle, ParameterSample, ProblemOracle, SampleSpace};
