pub mod data_io;
pub mod error;
pub mod features;
pub mod inverse;
pub mod learn;
pub mod market;
pub mod pipeline;
pub mod scenario;
pub mod synth;
pub mod valuation;

pub use error::{CoreError, Result};
