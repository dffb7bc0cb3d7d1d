use serde::Serialize;

use crate::error::{contract, Result};
use crate::scalar::Scalar;

/// Expert probabilities for one coordinate and the Top-K selection drawn
/// from them.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GateDecision<T> {
    pub probs: Vec<T>,
    /// Selected experts, most probable first.
    pub selected: Vec<usize>,
    /// Selected probabilities renormalized to sum to one.
    pub weights: Vec<T>,
}

/// Experts ordered by descending probability; equal probabilities keep the
/// lower index first.
pub fn rank_experts<T: Scalar>(probs: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Index of the most probable expert (lowest index on ties).
pub fn top1<T: Scalar>(probs: &[T]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

pub fn route_topk<T: Scalar>(probs: &[T], top_k: usize) -> Result<GateDecision<T>> {
    if top_k == 0 || top_k > probs.len() {
        return Err(contract(format!(
            "top_k {top_k} outside 1..={} experts",
            probs.len()
        )));
    }
    let selected: Vec<usize> = rank_experts(probs).into_iter().take(top_k).collect();
    let total: T = selected.iter().map(|&e| probs[e]).sum();
    let weights = selected.iter().map(|&e| probs[e] / total).collect();
    Ok(GateDecision {
        probs: probs.to_vec(),
        selected,
        weights,
    })
}
