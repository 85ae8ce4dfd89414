//! Harmonic-coupled Riccati equations (HCREs) and the consensus-on-information
//! distributed filters whose covariance recursions they describe.
//!
//! The crate is `no_std` (it needs `alloc`). It covers:
//!
//! * [`linalg`]: SPD and nonnegative matrix newtypes, harmonic means, Perron
//!   vectors, observability, spectral radii and a doubling DLE solver.
//! * [`model`]: plant/sensor models, topologies and fusion weight pairs for the
//!   CIDF, ICF and CMCI variants.
//! * [`hcre`]: the coupled iteration, fixed-point solvers and certificates.
//! * [`steady`]: stacked error dynamics and the steady-state error covariance.
//! * [`asymptotic`]: limits as the fusion depth grows.
//! * [`filtersim`]: simulated plants and the information-form filter bank.
//! * [`presets`]: the reference scalar, 6-state and target-tracking setups.
#![no_std]
// Negated comparisons are how NaN inputs get rejected; index loops mirror the
// block formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod asymptotic;
pub mod error;
pub mod filtersim;
pub mod hcre;
pub mod linalg;
pub mod model;
pub mod presets;
pub mod steady;

pub use error::{Error, Result};
pub use hcre::{CovarianceFamily, Init, SolveOptions, SolveReport};
pub use linalg::{NonnegativeMatrix, SpdMatrix};
pub use model::{FusionWeights, Sensor, SystemModel, Topology, Variant};
