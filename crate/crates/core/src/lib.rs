//! Numerical laboratory for δ-discretized measures, curved tubes and incidences.

pub mod constructions;
pub mod curve;
pub mod dyadic;
pub mod error;
pub mod experiments;
pub mod fft;
pub mod incidence;
pub mod measures;
pub mod numeric;
pub mod seed;
pub mod spectral;

pub use error::{LabError, Result, DEFAULT_BUDGET};
