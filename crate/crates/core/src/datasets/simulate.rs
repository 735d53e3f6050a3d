use crate::dose::{compute_weights, simulate_with, to_hu_mm, DoseParams, StatWeights};
use crate::error::Result;
use crate::tomo::{fbp, FanBeamProjector, FilterKind, Image, Sinogram};

/// One simulated low-dose acquisition of a reference image. All arrays are
/// rounded to single precision so they survive a file round trip unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedCase {
    pub id: String,
    pub truth: Image,
    /// Post-log line integrals.
    pub y: Sinogram,
    pub weights: StatWeights,
    /// FBP of the noisy data, in HU.
    pub x0: Image,
}

pub fn simulate_case(
    id: impl Into<String>,
    projector: &FanBeamProjector,
    truth: &Image,
    dose: &DoseParams,
    filter: FilterKind,
) -> Result<SimulatedCase> {
    let mut truth = truth.clone();
    truth.quantize_f32();
    let mut y = simulate_with(&truth, projector, dose)?;
    y.quantize_f32();
    let mut weights = compute_weights(&y, dose);
    weights.quantize_f32();
    let mut x0 = fbp(&to_hu_mm(&y), projector.geometry(), filter)?;
    x0.quantize_f32();
    Ok(SimulatedCase {
        id: id.into(),
        truth,
        y,
        weights,
        x0,
    })
}
