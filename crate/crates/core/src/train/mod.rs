//! Self-supervised per-image fitting: losses, the training loop, checkpoints.

mod checkpoint;
mod losses;
mod trainer;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader, SSTA_VERSION};
pub use losses::{
    fidelity_loss, fidelity_value, kl_divergence, proximal_loss, proximal_value, softmax, sparsity_loss, sparsity_value, Bound, Problem,
};
pub use trainer::{train, IterRecord, LossWeights, Session, TrainConfig, TrainReport};
