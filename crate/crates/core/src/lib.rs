pub mod contour;
pub mod dataset;
pub mod error;
pub mod generation;
pub mod midi;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
