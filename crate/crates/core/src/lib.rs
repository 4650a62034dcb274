//! Developmental counting-and-pointing model.
//!
//! A small convolutional-recurrent network learns to point at balls from left
//! to right, to recite number words, and finally to count, with its own
//! pointing hand composited back into the image it sees.

pub mod net;
pub mod scene;
pub mod curriculum;
pub mod eval;
pub mod exec;
pub mod optim;
pub mod training;
pub mod checkpoint;
pub mod config;
pub mod report;
