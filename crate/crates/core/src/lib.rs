pub mod adversarial;
pub mod corruption;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
