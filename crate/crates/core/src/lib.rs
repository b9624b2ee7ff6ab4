//! Identity assignment for group-housed animals from video detections and
//! coarse grid localisation.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod grid;
pub mod identifier;
pub mod matching;
pub mod pipeline;
pub mod simulator;
pub mod tracker;
pub mod weights;

pub use error::{Error, Result};
