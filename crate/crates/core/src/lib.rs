//! Robust PCA for Internet delay spaces.
//!
//! A round-trip-time matrix `X` (sources by destinations) is split into a
//! low-rank expected-latency matrix `L` and a sparse inflation matrix `S`.
//! The split drives two analyses: relating the rank of `L` to the number of
//! distinct (AS, city) endpoint groups, and flagging paths whose inflation
//! dominates their expected latency.
//!
//! Pipeline: [`measurement`] parsing and replicate collapsing, [`prefix`]
//! longest-prefix mapping, [`matrix`] construction and interpolation,
//! [`rpca`] decomposition, then [`anomaly`] detection or [`rank`] analysis.
//! [`synth`] generates planted fixtures and scores detectors against them.

pub mod anomaly;
pub mod error;
pub mod matrix;
pub mod measurement;
pub mod prefix;
pub mod rank;
pub mod report;
pub mod rpca;
pub mod synth;
pub mod tags;

pub use anomaly::{AnomalyCandidate, FilterConfig};
pub use error::{Error, Result};
pub use matrix::{CellState, LatencyMatrix, Level};
pub use measurement::MeasurementRecord;
pub use nalgebra::DMatrix;
pub use prefix::PrefixTable;
pub use rpca::{Decomposition, SolverOptions};
pub use tags::{AxisLabel, Continent, EndpointTag};
