mod bytes;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod msmhsa;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::params::fnv1a as fnv1a64;
pub use tensor::Tensor;
