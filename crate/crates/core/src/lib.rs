pub mod basis;
pub mod comparators;
pub mod data;
pub mod diagnostics;
pub mod dr;
pub mod error;
pub mod ipw;
pub mod kernel;
mod linalg;
pub mod outcome;
pub mod pipeline;
pub mod propensity;
pub mod resampling;
pub mod simulation;

pub use error::{Error, Result};
