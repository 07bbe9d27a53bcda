//! Two-stage speech-driven head animation: a graph-network displacement
//! model and a recurrent pose model, with their losses, training loops and
//! checkpoints.

pub mod animation;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod loss;
pub mod pose_model;
mod spec;
pub mod train;

pub use animation::{template_adjacency, window_input, AnimationModel};
pub use checkpoint::{load_checkpoint, load_params_into, save_checkpoint, Checkpointable};
pub use config::{AnimationConfig, ConfigMap, PoseConfig, PoseInput, TrainConfig};
pub use error::{Error, Result};
pub use pose_model::{feature_patch, LstmState, PoseModel};
pub use train::{train_stage1, train_stage2, HistoryRow, Stage1Data, Stage2Data};
