//! Feature-adaptive implicit neural representation for ensemble simulation
//! surrogates.
//!
//! A coordinate-gated mixture of attention-based key-value memory experts,
//! conditioned on simulation parameters, trained with a small reverse-mode
//! autodiff engine. The crate also carries the dataset format, metrics and
//! the exploration analyses that work on a trained model.

pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod par;
pub mod scalar;
pub mod surrogate;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use surrogate::{predict, Surrogate};
pub use tensor::Tensor;
