//! Multi-scenario CSI feedback workbench.
//!
//! Synthesizes clustered channels for several subregions of a cell, maps them
//! to the truncated angle-delay domain, and trains autoencoders in three
//! deployment modes: a single model for the cell, one model per region, and a
//! shared encoder with per-region decoders routed by a small classifier.

pub mod analytics;
pub mod channel_gen;
pub mod cmatrix;
pub mod dataset_io;
pub mod deployment;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod scenario;

pub use error::{CsiError, Result};
