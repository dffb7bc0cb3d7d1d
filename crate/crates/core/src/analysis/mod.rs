//! Exploration toolkit: expert assignment maps, graph-Laplacian frequency
//! per expert, and localized parameter sensitivity.

mod expert_map;
mod laplacian;
mod sensitivity;

pub use expert_map::{expert_map, ExpertMap};
pub use laplacian::{laplacian_energy, per_expert_frequency, Adjacency, FrequencyReport};
pub use sensitivity::{
    global_sensitivity, region_coords, sensitivity_sweep, Region, SensitivityCurve, SweepSpec, FD_STEP,
};
