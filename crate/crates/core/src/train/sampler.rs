use rand::Rng;

use crate::data::NormalizedEnsemble;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Samples of one batch that share a member, so the parameter-conditioned
/// values are computed once per distinct `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemberBatch<T> {
    pub member: usize,
    /// Coordinate row of each sample in the source ensemble.
    pub rows: Vec<usize>,
    pub coords: Tensor<T>,
    pub params: Vec<T>,
    pub targets: Vec<T>,
}

impl<T> MemberBatch<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Draws `batch_size` (member, coordinate) pairs uniformly with replacement
/// over members × `pool` (all coordinates when `None`) and groups them by
/// member in ascending member order. Members that were not drawn are omitted.
pub fn sample_batch<T: Scalar, R: Rng + ?Sized>(
    data: &NormalizedEnsemble<T>,
    pool: Option<&[usize]>,
    batch_size: usize,
    rng: &mut R,
) -> Vec<MemberBatch<T>> {
    let members = data.member_count();
    let n = pool.map_or(data.coord_count(), <[usize]>::len);
    if members == 0 || n == 0 {
        return Vec::new();
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); members];
    for _ in 0..batch_size {
        let j = rng.random_range(0..members);
        let k = rng.random_range(0..n);
        groups[j].push(pool.map_or(k, |p| p[k]));
    }
    let d = data.coords.cols();
    groups
        .into_iter()
        .enumerate()
        .filter(|(_, rows)| !rows.is_empty())
        .map(|(j, rows)| {
            let mut xs = Vec::with_capacity(rows.len() * d);
            for &i in &rows {
                xs.extend_from_slice(data.coords.row_slice(i));
            }
            MemberBatch {
                member: j,
                coords: Tensor::matrix(rows.len(), d, xs).expect("gathered rows"),
                params: data.params[j].clone(),
                targets: rows.iter().map(|&i| data.fields[j][i]).collect(),
                rows,
            }
        })
        .collect()
}
