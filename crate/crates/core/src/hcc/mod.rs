//! Boundary proxy: a gated recurrent encoder over hidden-state updates, a
//! sequential Gaussian latent, uncertainty/progress regression heads, a
//! gated fusion of the three, and cut/deletion heads on the fused state.

pub mod checkpoint;
pub mod config;
pub mod model;
pub mod params;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{HccConfig, UncertaintyTarget};
pub use model::{
    forward, gradients, huber, kl_gaussians, loss, softmax, ForwardOutput, LossBreakdown, Mode,
    TraceFeatures, TraceTargets,
};
pub use params::{init_params, HccParameters, TensorShape};
pub use train::{
    argmax_first, targets_from, train, EpochRecord, HccModel, Normalizer, Prediction, TrainOutcome,
};
