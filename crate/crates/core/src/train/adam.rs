use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientMap, ParameterSet};
use crate::error::{contract, Error, Result};
use crate::scalar::{c, Scalar};
use crate::tensor::Tensor;

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments aligned with a parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    /// Updates applied so far.
    pub step: usize,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParameterSet<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    fn matches(&self, params: &ParameterSet<T>) -> bool {
        self.first.len() == params.len()
            && self.second.len() == params.len()
            && params
                .tensors()
                .iter()
                .zip(self.first.iter().zip(&self.second))
                .all(|(p, (m, v))| p.shape() == m.shape() && p.shape() == v.shape())
    }
}

/// One bias-corrected Adam update. Nothing is modified when any gradient
/// entry is non-finite; the error names the offending parameter.
pub fn adam_step<T: Scalar>(
    params: &mut ParameterSet<T>,
    grads: &GradientMap<T>,
    state: &mut AdamState<T>,
    lr: T,
    cfg: &AdamConfig,
) -> Result<()> {
    if !state.matches(params) || grads.tensors().len() != params.len() {
        return Err(contract("optimizer state does not match the parameter set"));
    }
    for (id, g) in params.ids().zip(grads.tensors()) {
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(params.name(id).to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1: T = c(cfg.beta1);
    let b2: T = c(cfg.beta2);
    let eps: T = c(cfg.eps);
    let one = T::one();
    let corr1 = one - b1.powi(t);
    let corr2 = one - b2.powi(t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads.tensors())
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (one - b1) * gv;
            *vv = b2 * *vv + (one - b2) * gv * gv;
            let mhat = *mv / corr1;
            let vhat = *vv / corr2;
            *pv -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParameterSet<f64> {
        let mut ps = ParameterSet::new();
        ps.add("w", Tensor::scalar(v)).unwrap();
        ps
    }

    fn grad_of(ps: &ParameterSet<f64>, g: f64) -> GradientMap<f64> {
        let mut gm = GradientMap::zeros_like(ps);
        gm.get_mut(ps.id("w").unwrap()).data_mut()[0] = g;
        gm
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = scalar_set(1.5);
        let mut st = AdamState::new(&ps);
        st.first[0].data_mut()[0] = 0.2;
        let g = grad_of(&ps, 0.0);
        adam_step(&mut ps, &g, &mut st, 0.0, &AdamConfig::default()).unwrap();
        assert_eq!(ps.tensors()[0].data()[0], 1.5);
        assert!((st.first[0].data()[0] - 0.18).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_named() {
        let mut ps = scalar_set(0.0);
        let mut st = AdamState::new(&ps);
        let g = grad_of(&ps, f64::NAN);
        let err = adam_step(&mut ps, &g, &mut st, 0.1, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(st.step, 0);
    }
}
