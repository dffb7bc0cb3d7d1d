use crate::autodiff::{Graph, Var};
use crate::error::{contract, Result};
use crate::scalar::{c, Scalar};

/// Mean squared error of two equal-length slices.
pub fn mse_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<T> {
    if pred.len() != target.len() {
        return Err(contract(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(contract("mean squared error of an empty batch"));
    }
    let sum: T = pred.iter().zip(target).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(sum / c(pred.len() as f64))
}

/// `Σ (pred − target)² / denom` on the tape. Passing the full batch size
/// as `denom` lets per-member partial losses add up to the batch mean.
pub fn squared_error<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, denom: usize) -> Result<Var> {
    if denom == 0 || g.value(pred).is_empty() {
        return Err(contract("mean squared error of an empty batch"));
    }
    let diff = g.sub(pred, target)?;
    let sq = g.square(diff);
    let total = g.sum(sq);
    Ok(g.scale(total, c(1.0 / denom as f64)))
}

/// Tape mean squared error.
pub fn mse<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let n = g.value(pred).len();
    squared_error(g, pred, target, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn analytic_value() {
        assert_eq!(mse_loss(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert_eq!(mse_loss(&[0.5f32], &[0.5]).unwrap(), 0.0);
        assert!(mse_loss::<f64>(&[], &[]).is_err());
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn tape_gradient_is_two_residual_over_b() {
        let mut g = Graph::<f64>::new();
        let p = g.input(Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap());
        let t = g.constant(Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap());
        let l = mse(&mut g, p, t).unwrap();
        assert_eq!(g.value(l).data()[0], 5.0);
        let gr = g.backward(l).unwrap();
        assert_eq!(gr.get(p).unwrap().data(), &[1.0, 3.0]);
    }
}
