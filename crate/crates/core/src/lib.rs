//! Weakly supervised photo enhancement: train a generator that maps photos
//! from a low-quality camera domain to a high-quality one using two unpaired
//! image collections, and measure the result.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod tensor;
pub mod toy;
pub mod training;

pub use error::{Error, Result};
pub use imaging::ImageBatch;
