//! Union of learned sparsifying transforms: patch extraction, sparse coding
//! with clustering, closed-form transform updates and the learning loop.

mod bank;
mod coding;
mod learn;
mod patches;

pub use bank::{dct_matrix, random_orthogonal, TransformBank};
pub use coding::{
    hard_threshold, patch_cost, sparse_code_and_cluster, sparse_code_and_cluster_with,
    ClusterPenalty, SparseCodeResult,
};
pub use learn::{
    learn_ultra, learn_ultra_from_patches, transform_objective, transform_penalty,
    update_transform, LearnConfig, LearnTrace,
};
pub use patches::{
    accumulate_patches, extract_patches, extract_patches_raw, patch_coverage, PatchBoundary,
    PatchConfig,
};
