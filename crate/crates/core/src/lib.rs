//! Structured-illumination ptychography simulator: coded-aperture and zone-plate probes,
//! far-field acquisition with photon noise, conjugate-gradient object recovery and
//! Siemens-star MTF scoring.
//!
//! Numerical types are generic over [`Real`] (`f32` or `f64`); the aliases below fix the
//! precision for callers that do not need the choice.

// `!(x > y)` forms reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coded_aperture;
pub mod error;
pub mod fft;
pub mod format;
pub mod forward;
pub mod metrics;
pub mod phantom;
pub mod probes;
pub mod scalar;
pub mod scan;
pub mod solver;
pub mod wavefield;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ComplexField64 = wavefield::ComplexField<f64>;
pub type ComplexField32 = wavefield::ComplexField<f32>;
pub type IntensityGrid64 = wavefield::IntensityGrid<f64>;
pub type IntensityGrid32 = wavefield::IntensityGrid<f32>;
pub type DiffractionDataset64 = forward::DiffractionDataset<f64>;
pub type DiffractionDataset32 = forward::DiffractionDataset<f32>;
pub type StarSpec64 = phantom::StarSpec<f64>;
pub type SolverConfig64 = solver::SolverConfig<f64>;
pub type ReconstructionState64 = solver::ReconstructionState<f64>;
