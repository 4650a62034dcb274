//! Report artifacts. CSV files are the source of truth: statistics are always
//! computed from parsed CSV text, so rerunning them on the emitted files alone
//! gives the same bits. Numbers are written with Rust's shortest round-trip
//! formatting for that reason.

mod svg;
mod tables;

pub use svg::*;
pub use tables::*;
