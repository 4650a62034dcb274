//! Trial scoring, per-condition accuracies and the comparative analyses.

mod analysis;
mod scoring;
pub mod stats;

pub use analysis::*;
pub use scoring::*;
