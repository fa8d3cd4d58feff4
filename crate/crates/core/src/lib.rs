pub mod autodiff;
pub mod data;
pub mod error;
pub mod hypertune;
pub mod latency;
pub mod nas;
pub mod params;
pub mod scalar;
pub mod space;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision tensor used throughout the search pipeline.
pub type Tensor = tensor::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type Supernet = space::Supernet<f64>;
pub type FixedNet = space::FixedNet<f64>;
