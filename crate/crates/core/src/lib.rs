//! Impedance estimation for radial low-voltage feeders from unsynchronized
//! per-phase P, Q and |V| readings.
//!
//! The pipeline: build a [`topology::GridTopology`], ingest readings into a
//! [`measurement::MeasurementSet`], classify lines with
//! [`decompose::decompose`] and estimate them with
//! [`estimate::estimate_all`]. [`synth`] generates feeders with known
//! impedances for validation.

pub mod decompose;
pub mod estimate;
pub mod measurement;
pub mod report;
pub mod sensitivity;
pub mod synth;
pub mod topology;

pub use decompose::{decompose, LineCase, LineClassification};
pub use estimate::{estimate_all, EstimatorConfig, FeasibleVoltageBand, ImpedanceEstimate, Quality, Reason};
pub use measurement::{MeasurementSet, PhaseMoments};
pub use topology::{GridTopology, Line, NodeId, Phase};
