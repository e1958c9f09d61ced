//! Daily discord detection for building energy meters.
//!
//! The library labels each day of a portfolio's load profiles as a discord
//! (an atypical daily pattern), a non-discord, or unevaluable. The pipeline:
//!
//! 1. [`ingest`]: parse long-format meter CSVs, align every building onto a
//!    shared hourly calendar of whole days, impute short gaps.
//! 2. [`matrix_profile`]: per building, compute the z-normalized nearest
//!    neighbor distance of every daily-length subsequence, then reduce the
//!    profile to one value per day.
//! 3. [`stats`]: compare each date's pooled daily values against the pooled
//!    values of the same weekday with a two-sample KS test; fit a univariate
//!    Gaussian mixture over the resulting statistics.
//! 4. [`detector`]: turn statistics into labels. The default method derives
//!    a dynamic component threshold from the mixture; fixed p-value and
//!    two-standard-deviation baselines are included for comparison.
//! 5. [`eval`]: confusion counts, TPR/FPR, rank-based ROC-AUC, RMSLE, and a
//!    repeated-run benchmark harness.
//!
//! [`pipeline`] wires steps 2-4 together for callers that start from an
//! aligned portfolio, and [`synth`] generates seeded synthetic portfolios
//! with injected anomalies for tests and benchmarks.

#![forbid(unsafe_code)]

pub mod detector;
pub mod eval;
pub mod ingest;
pub mod matrix_profile;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use detector::{Granularity, Label, LabelSet, MethodTag};
pub use ingest::{MeterRecord, MeterSeries, Portfolio};
pub use matrix_profile::{Aggregation, MatrixProfile};
pub use pipeline::{DetectMethod, DetectParams, DetectionOutput, ReferenceScope};
