//! Losses and the training loops.

pub mod losses;
pub mod trainer;

pub use losses::{
    consistency_loss, diffusion_loss, key_joint_positions, masked_diffusion_loss, total_loss, total_loss_value, ConsistencyLoss, KeyJointMask,
    LossWeights,
};
pub use trainer::{cache_items, caption_encoder, compute_losses, make_batch, pretrain_backbone, run_training, write_curve, Losses, StepRecord, TrainBatch, TrainItem, TrainMode, TrainOutcome, Trainer};
