//! Joint crowd density-map estimation, head localization and point
//! tracking for aerial video.
//!
//! The pipeline: [`simulator`] produces synthetic sequences with head
//! trajectories, [`groundtruth`] turns annotations into supervision maps,
//! [`stanet`] is the space-time multi-scale attention network built on the
//! [`tensorcore`] autodiff engine, [`postprocess`] localizes heads and links
//! them into tracklets with min-cost flow, and [`metrics`] scores counts,
//! localizations and tracks.

pub mod cli;
pub mod error;
pub mod groundtruth;
pub mod metrics;
pub mod postprocess;
pub mod simulator;
pub mod stanet;
pub mod tensorcore;

pub use error::{Error, Result};
