use serde::{Deserialize, Serialize};

use crate::data::EnsembleDataset;
use crate::error::{contract, Result};
use crate::par;

/// Undirected graph with unit edge weights, stored as sorted neighbour lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    neighbours: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn from_edges(nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbours = vec![Vec::new(); nodes];
        for &(a, b) in edges {
            if a >= nodes || b >= nodes {
                return Err(contract(format!("edge ({a}, {b}) outside {nodes} nodes")));
            }
            if a != b {
                neighbours[a].push(b);
                neighbours[b].push(a);
            }
        }
        for list in &mut neighbours {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { neighbours })
    }

    /// Axis-aligned nearest neighbours on a regular lattice (6 in 3-D).
    pub fn lattice(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        let mut neighbours = vec![Vec::new(); n];
        let mut stride = vec![1usize; dims.len()];
        for a in (0..dims.len().saturating_sub(1)).rev() {
            stride[a] = stride[a + 1] * dims[a + 1];
        }
        for (i, list) in neighbours.iter_mut().enumerate() {
            for a in 0..dims.len() {
                let pos = (i / stride[a]) % dims[a];
                if pos > 0 {
                    list.push(i - stride[a]);
                }
                if pos + 1 < dims[a] {
                    list.push(i + stride[a]);
                }
            }
            list.sort_unstable();
        }
        Self { neighbours }
    }

    /// Symmetrized k-nearest-neighbour graph of row-major `N×d` points.
    /// Distance ties resolve to the lower index.
    pub fn knn(coords: &[f32], d: usize, k: usize) -> Result<Self> {
        if d == 0 || coords.len() % d != 0 {
            return Err(contract("coordinate buffer is not a whole number of points"));
        }
        let n = coords.len() / d;
        let near = par::map_range(n, |i| {
            let xi = &coords[i * d..(i + 1) * d];
            let mut dist: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let xj = &coords[j * d..(j + 1) * d];
                    let r: f64 = xi.iter().zip(xj).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
                    (r, j)
                })
                .collect();
            let k = k.min(dist.len());
            if k > 0 && k < dist.len() {
                dist.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite distances"));
            }
            dist.truncate(k);
            dist.into_iter().map(|(_, j)| j).collect::<Vec<_>>()
        });
        let edges: Vec<(usize, usize)> = near
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().map(move |&j| (i, j)))
            .collect();
        Self::from_edges(n, &edges)
    }

    /// Lattice graph when `ds` is gridded, 6-nearest-neighbour graph otherwise.
    pub fn for_dataset(ds: &EnsembleDataset) -> Result<Self> {
        match &ds.lattice {
            Some(dims) => Ok(Self::lattice(dims)),
            None => Self::knn(&ds.coords, ds.coord_dim, 6),
        }
    }

    pub fn nodes(&self) -> usize {
        self.neighbours.len()
    }

    pub fn neighbours(&self, i: usize) -> &[usize] {
        &self.neighbours[i]
    }

    pub fn edge_count(&self) -> usize {
        self.neighbours.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Subgraph induced by `nodes`, relabelled `0..nodes.len()` in the given order.
    pub fn induced(&self, nodes: &[usize]) -> Self {
        let mut local = vec![usize::MAX; self.nodes()];
        for (k, &i) in nodes.iter().enumerate() {
            local[i] = k;
        }
        let neighbours = nodes
            .iter()
            .map(|&i| {
                let mut l: Vec<usize> = self.neighbours[i]
                    .iter()
                    .filter_map(|&j| (local[j] != usize::MAX).then_some(local[j]))
                    .collect();
                l.sort_unstable();
                l
            })
            .collect();
        Self { neighbours }
    }
}

/// Rayleigh quotient `yᵀLy / yᵀy` of the mean-centered values with the
/// combinatorial Laplacian `L = D − A`; 0 for a constant signal.
pub fn laplacian_energy(graph: &Adjacency, values: &[f64]) -> Result<f64> {
    if values.len() != graph.nodes() {
        return Err(contract(format!(
            "{} values for a graph of {} nodes",
            values.len(),
            graph.nodes()
        )));
    }
    if values.len() < 2 {
        return Err(contract("Laplacian energy needs at least two nodes"));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let norm: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let mut quad = 0.0;
    for (i, list) in graph.neighbours.iter().enumerate() {
        for &j in list {
            if j > i {
                let diff = values[i] - values[j];
                quad += diff * diff;
            }
        }
    }
    // A constant signal has no edge differences even if centering left rounding noise.
    if quad == 0.0 || norm == 0.0 {
        return Ok(0.0);
    }
    Ok(quad / norm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    /// Energy on each expert's induced subgraph; `None` when it owns fewer than two nodes.
    pub per_expert: Vec<Option<f64>>,
    pub global: f64,
}

/// Laplacian energy of `values` on the whole graph and on each expert's
/// top-1 coordinate set.
pub fn per_expert_frequency(
    graph: &Adjacency,
    assignment: &[usize],
    experts: usize,
    values: &[f64],
) -> Result<FrequencyReport> {
    if assignment.len() != values.len() {
        return Err(contract("one expert index per value is required"));
    }
    let global = laplacian_energy(graph, values)?;
    let per_expert = (0..experts)
        .map(|e| {
            let rows: Vec<usize> = (0..assignment.len()).filter(|&i| assignment[i] == e).collect();
            if rows.len() < 2 {
                return Ok(None);
            }
            let sub = graph.induced(&rows);
            let v: Vec<f64> = rows.iter().map(|&i| values[i]).collect();
            laplacian_energy(&sub, &v).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrequencyReport { per_expert, global })
}
