//! Model-based CT reconstruction combining an unsupervised prior
//! (edge-preserving or a learned union of sparsifying transforms) with a
//! layer-wise trained denoiser.

pub mod datasets;
pub mod denoiser;
pub mod dose;
pub mod error;
pub mod io;
pub mod metrics;
pub mod regularizers;
pub mod solver;
pub mod super_engine;
pub mod tomo;
pub mod ultra;

pub use error::{Error, Result};
