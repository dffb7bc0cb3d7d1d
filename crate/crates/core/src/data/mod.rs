//! Ensemble datasets: in-memory model, file format, normalization, splits
//! and the analytic synthetic generator.

mod dataset;
pub mod format;
mod normalize;
mod split;
mod synthetic;

pub use dataset::{lattice_coords, lattice_slice, EnsembleDataset, Member};
pub use format::{load, save, Manifest};
pub use normalize::{normalize, NormalizationStats, NormalizedEnsemble};
pub use split::{spatial_split, SpatialSplit};
pub use synthetic::{
    generate_synthetic, make_ensemble, param_grid, random_params, Background, Blob, SyntheticSpec,
    SyntheticSurrogate,
};
