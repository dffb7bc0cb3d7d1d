//! The mixture-of-memory-experts surrogate and its building blocks.

mod adapter;
mod baseline;
mod checkpoint;
mod config;
mod expert;
mod fainr;
mod gating;
mod mlp;
mod routing;

pub use adapter::ParameterAdapter;
pub use baseline::{BaselineConfig, CoordinateMlp};
pub use checkpoint::{load_checkpoint, load_checkpoint_as, load_checkpoint_with_state, save_checkpoint, save_checkpoint_with_state, CHECKPOINT_MAGIC};
pub use config::ModelConfig;
pub use expert::{ExpertEncoder, MemoryBank};
pub use fainr::{Diagnostics, ExpertAttention, FaInrModel, ForwardTrace};
pub use gating::GatingNetwork;
pub use mlp::Mlp;
pub use routing::{rank_experts, route_topk, top1, GateDecision};
