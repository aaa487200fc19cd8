pub mod autodiff;
pub mod budget;
pub mod construction;
pub mod dataset;
pub mod error;
pub mod fourier;
pub mod mlp;
pub mod rng;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
