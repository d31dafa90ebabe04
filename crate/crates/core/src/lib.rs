//! Recursive reconstruction of time sequences of sparse signals.
//!
//! Each step runs compressive sensing on the residual of a least-squares
//! estimate computed on the previous support, then refines the support by
//! thresholding.

pub mod bounds;
pub mod filter;
pub mod harness;
pub mod measurement;
pub mod sigmodel;
pub mod solver;
pub mod support;

pub use measurement::{MeasurementMatrix, RipTable, Thresholds};
pub use support::{SignalVector, SupportSet};
