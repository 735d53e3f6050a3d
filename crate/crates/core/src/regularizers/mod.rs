//! Edge-preserving and union-of-transforms regularizers, and the spatial
//! weights κ (per pixel) and τ (per patch) that equalize resolution.

mod ep;
mod spatial;
mod ultra_reg;

pub use ep::{
    ep_curvature, ep_gradient, ep_majorizer, ep_value, phi, phi_deriv, EpParams, Neighborhood,
};
pub use spatial::{kappa_map, tau_weights, SpatialWeighting};
pub use ultra_reg::{ultra_reg_gradient, ultra_reg_value, UltraRegState};
