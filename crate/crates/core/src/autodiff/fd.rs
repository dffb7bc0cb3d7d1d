use crate::error::{contract, Result};
use crate::scalar::Scalar;

use super::{GradientMap, Graph, ParameterSet, Var};

/// Worst-case disagreement between tape and finite-difference gradients.
#[derive(Clone, Debug)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// Parameter name and flat offset of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Value and tape gradients of the scalar built by `f`.
pub fn gradient_of<T, F>(f: &F, params: &ParameterSet<T>) -> Result<(T, GradientMap<T>)>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParameterSet<T>) -> Result<Var>,
{
    let mut g = Graph::new();
    let root = f(&mut g, params)?;
    let grads = g.backward(root)?;
    Ok((g.value(root).data()[0], g.param_gradients(&grads, params)))
}

fn value_of<T, F>(f: &F, params: &ParameterSet<T>) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParameterSet<T>) -> Result<Var>,
{
    let mut g = Graph::new();
    let root = f(&mut g, params)?;
    Ok(g.value(root).data()[0])
}

/// Compares `analytic` against central differences of `f` for every scalar
/// parameter. The estimate uses the fourth-order stencil at `±eps, ±2eps`, so
/// truncation error stays far below rounding error for smooth `f`. Relative error uses the denominator `max(|g_ad|, |g_fd|, 1e-12)`.
pub fn compare_gradients<T, F>(
    analytic: &GradientMap<T>,
    f: &F,
    params: &ParameterSet<T>,
    eps: T,
) -> Result<FdReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParameterSet<T>) -> Result<Var>,
{
    if eps <= T::zero() {
        return Err(contract("fd_check epsilon must be positive"));
    }
    let mut probe = params.clone();
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let h = eps.to_f64_lossy();
    for id in params.ids() {
        for k in 0..params.get(id).len() {
            let orig = probe.get(id).data()[k];
            let mut at = |offset: T| -> Result<f64> {
                probe.get_mut(id).data_mut()[k] = orig + offset;
                value_of(f, &probe).map(|v| v.to_f64_lossy())
            };
            let (p1, m1) = (at(eps)?, at(-eps)?);
            let (p2, m2) = (at(eps + eps)?, at(-(eps + eps))?);
            probe.get_mut(id).data_mut()[k] = orig;

            let fd = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let ad = analytic.get(id).data()[k].to_f64_lossy();
            let denom = ad.abs().max(fd.abs()).max(1e-12);
            let rel = (ad - fd).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err || rel.is_nan() {
                report.max_rel_err = rel;
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}

/// Tape gradients of `f` checked against central differences.
pub fn fd_check<T, F>(f: F, params: &ParameterSet<T>, eps: T) -> Result<FdReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParameterSet<T>) -> Result<Var>,
{
    let (_, analytic) = gradient_of(&f, params)?;
    compare_gradients(&analytic, &f, params, eps)
}
