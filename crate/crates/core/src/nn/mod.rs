//! Small trainable dense encoders with exact reverse-mode gradients, an
//! AdamW optimizer, finite-difference gradient checking and checkpoints.

mod adamw;
mod checkpoint;
mod encoder;
mod gradcheck;
mod matrix;

pub use adamw::{AdamW, AdamWConfig};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, EpochRecord, TrainingMetadata, TrainingStage,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub(crate) use checkpoint::write_atomic;
pub use encoder::{Activation, Dense, Encoder, EncoderConfig, ForwardCache, Gradients, DEGENERATE_NORM};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, LossEval};
pub use matrix::{dot, l2_norm, Matrix};
pub(crate) use matrix::axpy;
