//! Layer-wise supervised/unsupervised reconstruction: each layer applies a
//! trained denoiser and then an MBIR step anchored to its output.

mod config;
mod engine;
mod model;
#[cfg(test)]
mod tests;

pub use config::{
    MbirInit, PriorConfig, SuperConfig, SuperMode, DESK_ANCHOR_WEIGHT, DESK_EP_BETA,
    DESK_ULTRA_BETA, DESK_WEIGHT_SCALE, PRESETS,
};
pub use engine::{
    evaluate_fixed_point_residual, super_reconstruct, super_train, SuperReconstruction,
    SuperTraining, TrainingCase,
};
pub use model::{layer_file_name, LayerMetrics, LayeredSuperModel};
