//! Reverse-mode differentiation over dense tensors, plus a central-difference
//! gradient verifier.

mod fd;
mod graph;
mod params;

pub use fd::{compare_gradients, fd_check, gradient_of, FdReport};
pub use graph::{Gradients, Graph, Var};
pub use params::{GradientMap, ParamId, ParameterSet};

