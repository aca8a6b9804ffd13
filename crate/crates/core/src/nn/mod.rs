//! A small rectifier MLP encoder with a unit-norm head, Adam with
//! warmup-cosine scheduling, contrastive pretraining, the linear probe and
//! the end-to-end ("vanilla") regression baseline.

mod checkpoint;
mod encoder;
mod optim;
mod train;

pub use checkpoint::{Checkpoint, LayerRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use encoder::{
    encoder_backward, encoder_forward, mlp_backward, mlp_forward, DenseLayer, EncoderConfig, ForwardCache, MlpParams,
};
pub use optim::{adam_step, lr_at, OptimState, Schedule, TrainConfig, ADAM_EPS, BETA1, BETA2};
pub use train::{
    embed, linear_probe, pretrain, vanilla_train, EpochLog, MixSettings, PretrainOutput, ProbeParams, VanillaModel,
};
