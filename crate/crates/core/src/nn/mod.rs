//! Minimal fully connected networks with reverse-mode gradients, Adam, and
//! the classification, triplet and regression losses.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, NetworkEntry};
pub use loss::{
    batch_hard_triplet_loss, cross_entropy_loss, l2_regression_loss, triplet_loss, ReidLossWeights, TripletOutput,
};
pub use mlp::{ForwardCache, Linear, MlpConfig, MlpGrads, MlpParams, Mode, Norm};
