//! Dependence analysis of Internet flow size, duration and rate.
//!
//! The crate is organised as a pipeline:
//!
//! * [`ingest`] turns packet-event and flow-summary CSV into connection and
//!   ADU summaries.
//! * [`metrics`] maps summaries into the log10 domain.
//! * [`corr`] computes Pearson coefficients over joint size/duration
//!   threshold grids.
//! * [`truncnorm`] evaluates the correlation of a singly truncated bivariate
//!   normal and provides a simulator plus a Monte Carlo cross-check.
//! * [`extremal`] performs the ICRT, polar thresholding and EDM curves.

pub mod corr;
pub mod extremal;
pub mod ingest;
pub mod metrics;
pub mod truncnorm;

pub use corr::{corr_grid, pearson, CorrCell, CorrError, CorrGrid, ThresholdGrid, VarPair};
pub use extremal::{
    edm, edm_curve, icrt, to_polar, top_fraction, EdmCurve, ExtremalError, PolarSample, RadiusNorm,
};
pub use ingest::{
    AduSummary, ConnectionSummary, Direction, HttpPorts, IngestError, PacketEvent, Timestamp,
    Transfer,
};
pub use metrics::{batch_log_points, to_log_point, LogLogPoint, MetricsError};
pub use truncnorm::{BivariateNormalParams, TruncNormError, TruncationSpec};
