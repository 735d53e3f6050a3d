//! Supervised image-to-image module: a small residual convolutional
//! network, its exact gradient, and a seeded SGD trainer.

mod net;
mod train;
mod weights;

pub use net::{apply, loss_and_gradient};
pub use train::{train, Optimizer, TrainConfig};
pub use weights::{
    Denoiser, DenoiserSpec, DenoiserWeights, LayerSpec, Normalization, TrainingMeta,
};
