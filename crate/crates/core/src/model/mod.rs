//! Multi-task re-identification transformer and its checkpoints.

pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod params;
pub mod transreid;

pub use candle_core::DType;
pub use checkpoint::{CheckpointHeader, CHECKPOINT_VERSION};
pub use config::{BranchSet, JigsawRemainder, ModelConfig, DAMAGE_OUTPUTS};
pub use params::ParamStore;
pub use transreid::{jigsaw_groups, route_batch, Batch, BranchOutputs, Tasks, TransReid, INFERENCE_SHUFFLE_SEED};
