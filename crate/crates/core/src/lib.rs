//! Query-conditioned music source separation with a shared band-split
//! encoder and one mask decoder for every stem.

pub mod data;
pub mod config;
pub mod dsp;
pub mod error;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod query;
pub mod train;

pub use error::{Error, Result};
