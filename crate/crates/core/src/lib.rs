//! Detection of illegal pick-up spots from sparse coach GPS traces.

pub mod admm;
pub mod error;
pub mod geo;
pub mod grid;
pub mod ingest;
pub mod pipeline;
pub mod scoring;
pub mod stop;
pub mod synth;

pub use error::{Error, Result};
