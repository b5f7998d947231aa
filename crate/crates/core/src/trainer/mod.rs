//! Weakly supervised training of the affine and deformable networks, and a
//! network-free per-pair optimizer over the same objectives.

mod adam;
mod direct;
mod pipeline;
mod sample;
mod synthetic;

pub use adam::{adam_update, AdamState};
pub use direct::{optimize_pair_direct, optimize_pair_direct_traced, DirectConfig, DirectResult};
pub use pipeline::{
    epoch_means, prepare_dataset, step_gradients, train, train_step, ContextCache, Registration, StepGradients,
    StepLoss, StepRecord, TrainConfig, TrainState, TrainedPipeline, AFFINE_CHECKPOINT, DEFORM_CHECKPOINT, TRAIN_LOG,
};
pub use sample::{working_grid, PairSample};
pub use synthetic::{make_synthetic_pair, MonoPair};
