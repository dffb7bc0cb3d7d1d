use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};
use crate::tensor::Tensor;

use super::format::raw_ranges;
use super::EnsembleDataset;

/// Affine maps between raw units and model units: coordinates to `[-1,1]`,
/// parameters to `[0,1]`, field values to `[0,1]` (one global range).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub coord_ranges: Vec<[f64; 2]>,
    pub param_ranges: Vec<[f64; 2]>,
    pub field_range: [f64; 2],
}

/// Model-unit copy of a dataset.
#[derive(Clone, Debug)]
pub struct NormalizedEnsemble<T> {
    pub coords: Tensor<T>,
    pub params: Vec<Vec<T>>,
    pub fields: Vec<Vec<T>>,
    pub stats: NormalizationStats,
}

fn degenerate(r: &[f64; 2]) -> bool {
    !(r[1] > r[0])
}

impl NormalizationStats {
    /// Ranges of the coordinates and of the listed members (all members when `None`).
    pub fn fit(ds: &EnsembleDataset, members: Option<&[usize]>) -> Result<Self> {
        if ds.is_empty() || ds.members.is_empty() {
            return Err(Error::Data("cannot normalize an empty dataset".into()));
        }
        let subset;
        let view = match members {
            Some(idx) => {
                subset = ds.select_members(idx);
                &subset
            }
            None => ds,
        };
        let (coord_ranges, param_ranges, field_range) = raw_ranges(view);
        for (a, r) in coord_ranges.iter().enumerate() {
            if degenerate(r) {
                warn!("coordinate axis {a} is constant; it maps to 0");
            }
        }
        for (s, r) in param_ranges.iter().enumerate() {
            if degenerate(r) {
                warn!("parameter {s} is constant; it maps to 0");
            }
        }
        if degenerate(&field_range) {
            warn!("field is constant; it maps to 0");
        }
        Ok(Self {
            coord_ranges,
            param_ranges,
            field_range,
        })
    }

    pub fn coord_to_unit(&self, axis: usize, v: f64) -> f64 {
        let r = self.coord_ranges[axis];
        if degenerate(&r) {
            0.0
        } else {
            2.0 * (v - r[0]) / (r[1] - r[0]) - 1.0
        }
    }

    pub fn coord_from_unit(&self, axis: usize, u: f64) -> f64 {
        let r = self.coord_ranges[axis];
        if degenerate(&r) {
            r[0]
        } else {
            r[0] + (u + 1.0) * 0.5 * (r[1] - r[0])
        }
    }

    pub fn param_to_unit(&self, s: usize, v: f64) -> f64 {
        let r = self.param_ranges[s];
        if degenerate(&r) {
            0.0
        } else {
            (v - r[0]) / (r[1] - r[0])
        }
    }

    pub fn param_from_unit(&self, s: usize, u: f64) -> f64 {
        let r = self.param_ranges[s];
        if degenerate(&r) {
            r[0]
        } else {
            r[0] + u * (r[1] - r[0])
        }
    }

    /// Physical width of parameter `s` (1 for a constant axis).
    pub fn param_span(&self, s: usize) -> f64 {
        let r = self.param_ranges[s];
        if degenerate(&r) {
            1.0
        } else {
            r[1] - r[0]
        }
    }

    pub fn field_span(&self) -> f64 {
        if degenerate(&self.field_range) {
            1.0
        } else {
            self.field_range[1] - self.field_range[0]
        }
    }

    pub fn field_to_unit(&self, v: f64) -> f64 {
        if degenerate(&self.field_range) {
            0.0
        } else {
            (v - self.field_range[0]) / self.field_span()
        }
    }

    pub fn field_from_unit(&self, u: f64) -> f64 {
        self.field_range[0] + u * self.field_span()
    }

    pub fn coords_tensor<T: Scalar>(&self, ds: &EnsembleDataset) -> Tensor<T> {
        let d = ds.coord_dim;
        let data = ds
            .coords
            .iter()
            .enumerate()
            .map(|(k, &v)| c(self.coord_to_unit(k % d, v as f64)))
            .collect();
        Tensor::matrix(ds.len(), d, data).expect("validated dataset")
    }

    pub fn params_unit<T: Scalar>(&self, p: &[f64]) -> Vec<T> {
        p.iter().enumerate().map(|(s, &v)| c(self.param_to_unit(s, v))).collect()
    }

    pub fn field_unit<T: Scalar>(&self, values: &[f32]) -> Vec<T> {
        values.iter().map(|&v| c(self.field_to_unit(v as f64))).collect()
    }

    /// Applies these stats to every member of `ds`.
    pub fn apply<T: Scalar>(&self, ds: &EnsembleDataset) -> NormalizedEnsemble<T> {
        NormalizedEnsemble {
            coords: self.coords_tensor(ds),
            params: ds.members.iter().map(|m| self.params_unit(&m.params)).collect(),
            fields: ds.members.iter().map(|m| self.field_unit(&m.values)).collect(),
            stats: self.clone(),
        }
    }
}

impl<T: Scalar> NormalizedEnsemble<T> {
    pub fn member_count(&self) -> usize {
        self.params.len()
    }

    pub fn coord_count(&self) -> usize {
        self.coords.rows()
    }

    /// Copy restricted to `members` and, when given, to the coordinate rows `coords`.
    pub fn subset(&self, members: &[usize], coords: Option<&[usize]>) -> Self {
        let d = self.coords.cols();
        let (xs, fields) = match coords {
            Some(idx) => {
                let mut data = Vec::with_capacity(idx.len() * d);
                for &i in idx {
                    data.extend_from_slice(self.coords.row_slice(i));
                }
                let fields = members
                    .iter()
                    .map(|&j| idx.iter().map(|&i| self.fields[j][i]).collect())
                    .collect();
                (Tensor::matrix(idx.len(), d, data).expect("row subset"), fields)
            }
            None => (
                self.coords.clone(),
                members.iter().map(|&j| self.fields[j].clone()).collect(),
            ),
        };
        Self {
            coords: xs,
            params: members.iter().map(|&j| self.params[j].clone()).collect(),
            fields,
            stats: self.stats.clone(),
        }
    }
}

/// Normalizes `ds` with statistics fitted on all of its members.
pub fn normalize<T: Scalar>(ds: &EnsembleDataset) -> Result<NormalizedEnsemble<T>> {
    let stats = NormalizationStats::fit(ds, None)?;
    Ok(stats.apply(ds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Member;

    fn ds(coords: Vec<f32>, params: Vec<Vec<f64>>) -> EnsembleDataset {
        let n = coords.len();
        let m = params[0].len();
        let members = params
            .into_iter()
            .enumerate()
            .map(|(j, p)| Member {
                id: j.to_string(),
                params: p,
                values: (0..n).map(|i| (i + j) as f32).collect(),
            })
            .collect();
        EnsembleDataset::new(1, m, coords, members, None).unwrap()
    }

    #[test]
    fn unit_cube_coords_are_identity() {
        let d = ds(vec![-1.0, 0.25, 1.0], vec![vec![0.0], vec![1.0]]);
        let n = normalize::<f64>(&d).unwrap();
        assert_eq!(n.coords.data(), &[-1.0, 0.25, 1.0]);
    }

    #[test]
    fn midpoint_parameter() {
        let d = ds(vec![0.0, 1.0], vec![vec![0.0], vec![5.0], vec![10.0]]);
        let n = normalize::<f64>(&d).unwrap();
        assert_eq!(n.params[1], vec![0.5]);
    }

    #[test]
    fn constant_axis_maps_to_zero() {
        let d = ds(vec![3.0, 3.0], vec![vec![1.0], vec![2.0]]);
        let n = normalize::<f64>(&d).unwrap();
        assert_eq!(n.coords.data(), &[0.0, 0.0]);
    }

    #[test]
    fn empty_dataset_rejected() {
        let d = EnsembleDataset::new(1, 1, vec![0.0], vec![], None).unwrap();
        assert!(normalize::<f32>(&d).is_err());
    }
}
