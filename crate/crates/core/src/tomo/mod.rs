//! Images, sinograms, fan-beam geometry, projection and FBP.

mod fbp;
mod geometry;
mod image;
mod norm;
mod projector;

pub use fbp::{fbp, FilterKind};
pub use geometry::FanBeamGeometry;
pub use image::{Image, Sinogram};
pub use norm::{operator_norm_sq, power_iteration};
pub use projector::{
    back_project, forward_project, trace_ray, FanBeamProjector, IdentityOperator, LinearOperator,
};

pub(crate) use projector::check_sino;
