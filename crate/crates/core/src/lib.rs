//! Monte Carlo periodic homogenization for diffusions whose diffusion matrix
//! may vanish on a set of positive measure.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that simulates many
//! paths is generic over an [`Executor`], so the same code runs serially here
//! and in parallel from the `homog` companion crate without changing results.
//!
//! Module map:
//!
//! * [`torus`]: the flat torus, wrapping and periodic distance.
//! * [`coefficients`]: coefficient sets, the built-in catalog, validation.
//! * [`sde`]: Euler–Maruyama engine, Jacobian flow, hitting and contraction diagnostics.
//! * [`ergodic`]: invariant-measure histograms, π-averages, mixing rates.
//! * [`corrector`]: Monte Carlo cell-problem correctors and their derivatives.
//! * [`effective`]: effective covariance/drift and parabolic limit data.
//! * [`clt`]: finite-dimensional checks of the functional CLT.
//! * [`feynman_kac`]: elliptic and parabolic Feynman–Kac solvers.
#![no_std]
// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod clt;
pub mod coefficients;
pub mod corrector;
pub mod effective;
pub mod ergodic;
pub mod error;
pub mod exec;
pub mod feynman_kac;
pub mod field;
pub mod linalg;
pub mod quadrature;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod torus;

pub use coefficients::{Builtin, BuiltinOptions, CoefficientSet, ValidationReport};
pub use error::{Error, Result};
pub use exec::{Executor, Serial};
pub use field::{DomainSpec, Region, ScalarForm};
pub use sde::{PathBatch, SimConfig};
pub use torus::Torus;
