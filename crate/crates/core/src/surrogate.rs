//! Common interface of trainable coordinate surrogates.

use crate::autodiff::{Graph, ParameterSet, Var};
use crate::error::{contract, Result};
use crate::par;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rows evaluated per graph when predicting large coordinate sets.
pub const PREDICT_CHUNK: usize = 4096;

/// A differentiable map `(x, p) → ŷ` over normalized coordinates and
/// parameters.
pub trait Surrogate<T: Scalar>: Send + Sync {
    fn coord_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn parameters(&self) -> &ParameterSet<T>;
    fn parameters_mut(&mut self) -> &mut ParameterSet<T>;

    /// Predictions `[B×1]` for coordinates `[B×d]` and one parameter row `p` `[1×m]`.
    fn build(&self, g: &mut Graph<T>, coords: &Tensor<T>, p: Var) -> Result<Var>;

    /// Predictions plus an optional regularization term added to the loss.
    fn build_with_penalty(&self, g: &mut Graph<T>, coords: &Tensor<T>, p: Var) -> Result<(Var, Option<Var>)> {
        Ok((self.build(g, coords, p)?, None))
    }
}

/// Evaluates `model` on every row of `coords` for one parameter vector.
/// Chunks run on the rayon pool when the `parallel` feature is enabled.
pub fn predict<T: Scalar, S: Surrogate<T> + ?Sized>(model: &S, coords: &Tensor<T>, p: &[T]) -> Result<Vec<T>> {
    if p.len() != model.param_dim() {
        return Err(contract(format!(
            "expected {} parameters, got {}",
            model.param_dim(),
            p.len()
        )));
    }
    let n = coords.rows();
    let d = coords.cols();
    let chunks = n.div_ceil(PREDICT_CHUNK);
    let parts = par::map_range(chunks, |ci| -> Result<Vec<T>> {
        let lo = ci * PREDICT_CHUNK;
        let hi = (lo + PREDICT_CHUNK).min(n);
        let sub = Tensor::matrix(hi - lo, d, coords.data()[lo * d..hi * d].to_vec())?;
        let mut g = Graph::new();
        let pv = g.constant(Tensor::row(p.to_vec()));
        let out = model.build(&mut g, &sub, pv)?;
        Ok(g.value(out).data().to_vec())
    });
    let mut values = Vec::with_capacity(n);
    for part in parts {
        values.extend(part?);
    }
    Ok(values)
}
