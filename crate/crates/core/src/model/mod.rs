//! Sandwich-normalized decoder assembly, initialization, losses, optimizer and checkpoints.

mod checkpoint;
mod config;
mod forward;
mod optim;
mod train;
mod weights;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use config::{BlockSpec, FfnKind, ModelConfig, RunConfig, TrainConfig, PRESET_NAMES};
pub use forward::{
    embed, embed_value, final_head, model_forward, sandwich_block, training_loss,
    training_loss_value, Batch, ForwardOutput, LossParts, MoeLayerMetrics,
};
pub use optim::{adjusted_lr, AdamW, LrSchedule, ParamGroup};
pub use train::{memorizable_corpus, sample_windows, smoke_train, StepRecord, Trainer};
pub use weights::{
    init_norm_gains, vars_from_slice, BlockVars, BlockWeights, FfnVars, FfnWeights, ModelVars,
    ModelWeights,
};
