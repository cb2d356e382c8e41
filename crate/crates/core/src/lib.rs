//! Stream engine that turns per-frame vehicle detections into deduplicated
//! per-vehicle CO₂ estimates, plus the detection-evaluation metric suite.
//!
//! Stages, in pipeline order: [`ingest`] → [`tracker`] → [`classmap`] →
//! [`plate`] → [`registry`] → [`emission`]. [`metrics`] evaluates detector
//! output against ground truth and [`scenario`] synthesizes streams with
//! exact ground truth.

pub mod classmap;
pub mod config;
pub mod emission;
pub mod ingest;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod plate;
pub mod registry;
pub mod scenario;
pub mod tracker;
