//! Network construction, forward/backward orchestration and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod graph;
pub mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_with_config, save_checkpoint, Checkpoint,
    TrainingMeta,
};
pub use config::{Arch, BranchConv, LayerSpec, ModelConfig};
pub use graph::{build, Forward, Model, Tape};
pub use params::{Param, ParamKind, ParamStore};
