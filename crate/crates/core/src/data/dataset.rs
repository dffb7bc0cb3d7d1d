use crate::error::{Error, Result};

/// One simulation run: its parameter vector and field over the shared coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub id: String,
    pub params: Vec<f64>,
    pub values: Vec<f32>,
}

/// Fixed coordinate set shared by every member, plus the members.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleDataset {
    pub coord_dim: usize,
    pub param_dim: usize,
    /// Row-major `N×d` raw coordinates.
    pub coords: Vec<f32>,
    pub members: Vec<Member>,
    /// Lattice extents when the coordinates form a regular grid (axis 0 slowest).
    pub lattice: Option<Vec<usize>>,
    pub param_names: Vec<String>,
}

impl EnsembleDataset {
    pub fn new(
        coord_dim: usize,
        param_dim: usize,
        coords: Vec<f32>,
        members: Vec<Member>,
        lattice: Option<Vec<usize>>,
    ) -> Result<Self> {
        let ds = Self {
            coord_dim,
            param_dim,
            coords,
            members,
            lattice,
            param_names: (0..param_dim).map(|s| format!("p{s}")).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        if self.coord_dim == 0 {
            0
        } else {
            self.coords.len() / self.coord_dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coord(&self, i: usize) -> &[f32] {
        &self.coords[i * self.coord_dim..(i + 1) * self.coord_dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.coord_dim == 0 || self.param_dim == 0 {
            return Err(Error::Data("coordinate and parameter dimensions must be positive".into()));
        }
        if self.coords.len() % self.coord_dim != 0 {
            return Err(Error::Data(format!(
                "coordinate buffer of {} values is not a multiple of d = {}",
                self.coords.len(),
                self.coord_dim
            )));
        }
        let n = self.len();
        if let Some(dims) = &self.lattice {
            if dims.len() != self.coord_dim || dims.iter().product::<usize>() != n {
                return Err(Error::Data(format!("lattice {dims:?} does not describe {n} coordinates")));
            }
        }
        if self.param_names.len() != self.param_dim {
            return Err(Error::Data("one parameter name per parameter is required".into()));
        }
        for m in &self.members {
            if m.values.len() != n {
                return Err(Error::Data(format!(
                    "member {} has {} values, expected N = {n}",
                    m.id,
                    m.values.len()
                )));
            }
            if m.params.len() != self.param_dim {
                return Err(Error::Data(format!(
                    "member {} has {} parameters, expected m = {}",
                    m.id,
                    m.params.len(),
                    self.param_dim
                )));
            }
        }
        Ok(())
    }

    /// Dataset restricted to the given members (coordinates shared).
    pub fn select_members(&self, idx: &[usize]) -> Self {
        Self {
            members: idx.iter().map(|&i| self.members[i].clone()).collect(),
            ..self.clone_without_members()
        }
    }

    fn clone_without_members(&self) -> Self {
        Self {
            coord_dim: self.coord_dim,
            param_dim: self.param_dim,
            coords: self.coords.clone(),
            members: Vec::new(),
            lattice: self.lattice.clone(),
            param_names: self.param_names.clone(),
        }
    }

    /// Lattice index → flat coordinate index (axis 0 slowest).
    pub fn lattice_index(dims: &[usize], ijk: &[usize]) -> usize {
        ijk.iter().zip(dims).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Flat coordinate indices of the slice `axis = index` in row-major order
    /// of the remaining axes, plus the slice extents.
    pub fn slice_indices(&self, axis: usize, index: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let dims = self
            .lattice
            .as_ref()
            .ok_or_else(|| Error::Data("dataset has no lattice".into()))?;
        lattice_slice(dims, axis, index)
    }
}

/// Flat indices of the lattice plane `axis = index` (remaining axes in
/// row-major order) and the plane's extents.
pub fn lattice_slice(dims: &[usize], axis: usize, index: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if axis >= dims.len() {
        return Err(Error::Data(format!("axis {axis} out of range for {}-d lattice", dims.len())));
    }
    if index >= dims[axis] {
        return Err(Error::Data(format!(
            "index {index} out of range for axis {axis} (extent {})",
            dims[axis]
        )));
    }
    let extents: Vec<usize> = dims.iter().enumerate().filter(|&(a, _)| a != axis).map(|(_, &n)| n).collect();
    let count: usize = extents.iter().product();
    let mut out = Vec::with_capacity(count);
    let mut ijk = vec![0; dims.len()];
    for flat in 0..count {
        let mut rem = flat;
        for a in (0..dims.len()).rev() {
            if a == axis {
                ijk[a] = index;
                continue;
            }
            ijk[a] = rem % dims[a];
            rem /= dims[a];
        }
        out.push(EnsembleDataset::lattice_index(dims, &ijk));
    }
    Ok((out, extents))
}

/// Regular lattice over `domain` with `dims[a]` points per axis, axis 0 slowest.
pub fn lattice_coords(dims: &[usize], domain: &[(f64, f64)]) -> Vec<f32> {
    let n: usize = dims.iter().product();
    let d = dims.len();
    let mut out = Vec::with_capacity(n * d);
    let mut ijk = vec![0usize; d];
    for _ in 0..n {
        for a in 0..d {
            let (lo, hi) = domain[a];
            let t = if dims[a] > 1 {
                ijk[a] as f64 / (dims[a] - 1) as f64
            } else {
                0.5
            };
            out.push((lo + t * (hi - lo)) as f32);
        }
        for a in (0..d).rev() {
            ijk[a] += 1;
            if ijk[a] < dims[a] {
                break;
            }
            ijk[a] = 0;
        }
    }
    out
}
