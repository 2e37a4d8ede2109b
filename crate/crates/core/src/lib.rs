pub mod error;
pub mod model;
pub mod neuron;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub mod baselines;
pub mod fixtures;
pub mod harness;
pub mod importance;
pub mod metrics;
pub mod oracle;
pub mod report;
pub mod search;
