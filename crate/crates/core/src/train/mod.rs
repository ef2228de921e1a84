//! Optimizers, the epoch loop, and checkpoint files.

mod checkpoint;
mod fit;
mod optimizer;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, RngState,
    TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use fit::{
    evaluate_split, fit, train_step, write_curve_csv, CurvePoint, EvalPass, StepStats, TrainConfig, CURVE_HEADER,
};
pub use optimizer::{Optimizer, OptimizerKind};
