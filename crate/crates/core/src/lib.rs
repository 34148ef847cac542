pub mod cli;
pub mod cmatrix;
pub mod error;
pub mod metrics;
pub mod symgroup;
pub mod teleport;
pub mod weingarten;
pub mod witness;

pub use error::{Error, Result};
