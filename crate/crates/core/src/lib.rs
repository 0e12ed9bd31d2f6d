pub mod ablation;
pub mod branches;
pub mod car;
pub mod cli;
pub mod dataio;
pub mod diffcore;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod pyramid;

pub use error::{Error, ErrorClass, FormatError, Result};
