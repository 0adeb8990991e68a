pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod detection;
pub mod error;
pub mod io;
pub mod json;
pub mod model;
pub mod neighbor;
pub mod pipeline;
pub mod relevance;
pub mod spectral;
pub mod tensor;
mod train;

pub use error::{Error, Result};
