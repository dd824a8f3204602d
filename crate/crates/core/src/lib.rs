//! Cooperative receive diversity analysis for body-area-network channel
//! traces.
//!
//! The pipeline: parse packet records ([`trace`]), build direct and
//! relayed branches and combine them ([`diversity`]), then measure outage
//! probability and continuous outage duration ([`metrics`]). [`synth`]
//! generates seeded synthetic traces and [`analysis`] assembles reports.

pub mod analysis;
pub mod diversity;
pub mod error;
pub mod metrics;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
