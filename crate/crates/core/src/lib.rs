//! Spatial–channel attention network for four-channel GNSS-R significant
//! wave height retrieval, with the collocation pipeline and evaluation suite
//! that feed and score it.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod training;

pub use config::RunConfig;
pub use error::{Error, Result};
