//! Sparsity + structured channel pruning for a single-branch CNN in-loop
//! filter, with a block-DCT artifact generator and the quality/efficiency
//! metrics used to evaluate the pruned networks.

pub mod adam;
pub mod autodiff;
pub mod codec;
pub mod config;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod param;
pub mod pipeline;
pub mod prune;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use param::{ParamId, Parameter};
pub use rng::Prng;
pub use tensor::Tensor;
