use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Disjoint train/test partition of coordinate indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Uniformly random partition of `0..n` with `round(n·ratio)` training
/// indices. Both halves are returned sorted.
pub fn spatial_split(n: usize, ratio: f64, seed: u64) -> Result<SpatialSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(contract(format!("split ratio {ratio} must lie strictly between 0 and 1")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let cut = ((n as f64) * ratio).round() as usize;
    let mut train = idx[..cut].to_vec();
    let mut test = idx[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SpatialSplit { train, test })
}
