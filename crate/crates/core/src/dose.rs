//! Low-dose measurement simulation and statistical weights.
//!
//! Reference images are in modified HU. A fixed linear map converts HU to
//! linear attenuation (water = 1000 HU = 0.0193 / mm) before projection, so
//! simulated line integrals are unitless.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tomo::{check_sino, FanBeamGeometry, FanBeamProjector, Image, LinearOperator, Sinogram};

pub const MU_WATER_PER_MM: f64 = 0.0193;

/// Attenuation per mm for one HU.
pub const HU_TO_MU: f64 = MU_WATER_PER_MM / 1000.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightModel {
    /// `ybar^2 / (ybar + sigma2)`, inverse variance of post-log
    /// Poisson-plus-Gaussian data.
    #[default]
    PoissonGaussian,
    /// `I0 exp(-y)`, ignoring electronic noise.
    Poisson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoseParams {
    /// Incident photons per ray.
    pub i0: f64,
    /// Electronic noise variance, counts^2.
    pub sigma2: f64,
    /// Count floor applied before the log.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub seed: u64,
    #[serde(default)]
    pub weight_model: WeightModel,
}

fn default_epsilon() -> f64 {
    0.1
}

/// Named incident-flux presets, all with electronic noise variance 25.
pub const DOSE_PRESETS: [(&str, f64); 5] = [
    ("i0-1e4", 1e4),
    ("i0-2e4", 2e4),
    ("i0-8e4", 8e4),
    ("i0-1e5", 1e5),
    ("i0-2e5", 2e5),
];

impl DoseParams {
    pub fn new(i0: f64, sigma2: f64, seed: u64) -> Self {
        DoseParams {
            i0,
            sigma2,
            epsilon: default_epsilon(),
            seed,
            weight_model: WeightModel::default(),
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        DOSE_PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|&(_, i0)| DoseParams::new(i0, 25.0, seed))
            .ok_or_else(|| Error::arg(format!("unknown dose preset {name:?}")))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.i0 > 0.0 && self.i0.is_finite()) {
            return Err(Error::arg(format!("I0 must be positive, got {}", self.i0)));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::arg(format!(
                "sigma2 must be nonnegative, got {}",
                self.sigma2
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < self.i0) {
            return Err(Error::arg(format!(
                "epsilon must lie in (0, I0), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Diagonal of the statistical weighting matrix, one entry per ray.
#[derive(Clone, Debug, PartialEq)]
pub struct StatWeights {
    n_views: usize,
    n_dets: usize,
    data: Vec<f64>,
}

impl StatWeights {
    pub fn new(n_views: usize, n_dets: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_views * n_dets {
            return Err(Error::arg("weight buffer does not match dimensions"));
        }
        if data.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Data("weights must be finite and nonnegative".into()));
        }
        Ok(StatWeights {
            n_views,
            n_dets,
            data,
        })
    }

    pub fn uniform(n_views: usize, n_dets: usize, value: f64) -> Self {
        StatWeights {
            n_views,
            n_dets,
            data: vec![value; n_views * n_dets],
        }
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn n_dets(&self) -> usize {
        self.n_dets
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

/// One noisy post-log measurement of line integral `ell`, drawn from the
/// stream `ray` of the generator keyed by `seed`.
fn noisy_measurement(ell: f64, p: &DoseParams, ray: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    rng.set_stream(ray);
    let mean = p.i0 * (-ell).exp();
    let mut count = if mean > 0.0 {
        Poisson::new(mean)
            .expect("finite positive mean")
            .sample(&mut rng)
    } else {
        0.0
    };
    if p.sigma2 > 0.0 {
        count += Normal::new(0.0, p.sigma2.sqrt())
            .expect("valid sigma")
            .sample(&mut rng);
    }
    -(count.max(p.epsilon) / p.i0).ln()
}

/// Adds Poisson-Gaussian noise to noiseless line integrals.
///
/// Each ray uses its own generator stream keyed by `(seed, ray index)`, so the
/// result does not depend on evaluation order.
pub fn simulate_from_line_integrals(ell: &Sinogram, p: &DoseParams) -> Result<Sinogram> {
    p.validate()?;
    if let Some((i, v)) = ell.data().iter().enumerate().find(|(_, v)| **v < -1e-9) {
        return Err(Error::Data(format!(
            "negative line integral {v} at ray {i}; check HU-to-attenuation units"
        )));
    }
    let mut out = vec![0.0; ell.len()];
    out.par_iter_mut()
        .zip(ell.data().par_iter())
        .enumerate()
        .for_each(|(i, (o, &l))| *o = noisy_measurement(l.max(0.0), p, i as u64));
    Sinogram::new(ell.n_views(), ell.n_dets(), out, ell.geometry_id())
}

/// Noiseless line integrals of an HU image.
pub fn line_integrals(ref_image: &Image, projector: &FanBeamProjector) -> Result<Sinogram> {
    let mut sino = projector.project(ref_image)?;
    sino.data_mut().iter_mut().for_each(|v| *v *= HU_TO_MU);
    Ok(sino)
}

/// Simulates a low-dose post-log sinogram from an HU reference image.
pub fn simulate_low_dose(
    ref_image: &Image,
    geom: &FanBeamGeometry,
    p: &DoseParams,
) -> Result<Sinogram> {
    let projector = FanBeamProjector::matrix_free(geom)?;
    simulate_with(ref_image, &projector, p)
}

pub fn simulate_with(
    ref_image: &Image,
    projector: &FanBeamProjector,
    p: &DoseParams,
) -> Result<Sinogram> {
    let ell = line_integrals(ref_image, projector)?;
    simulate_from_line_integrals(&ell, p)
}

/// Estimated inverse variance of each post-log measurement.
pub fn compute_weights(y: &Sinogram, p: &DoseParams) -> StatWeights {
    let data = y
        .data()
        .iter()
        .map(|&yi| {
            let ybar = p.i0 * (-yi).exp();
            match p.weight_model {
                WeightModel::PoissonGaussian => {
                    let w = ybar * ybar / (ybar + p.sigma2);
                    if w.is_finite() {
                        w
                    } else {
                        0.0
                    }
                }
                WeightModel::Poisson => ybar,
            }
        })
        .collect();
    StatWeights {
        n_views: y.n_views(),
        n_dets: y.n_dets(),
        data,
    }
}

/// Rescales a post-log sinogram to `HU * mm`, the units in which `A` acts on
/// HU images.
pub fn to_hu_mm(y: &Sinogram) -> Sinogram {
    y.with_data(y.data().iter().map(|v| v / HU_TO_MU).collect())
}

pub fn check_weights(w: &StatWeights, geom: &FanBeamGeometry) -> Result<()> {
    check_sino(&Sinogram::zeros(w.n_views, w.n_dets, ""), geom)
}

pub fn check_weights_for(w: &StatWeights, op: &dyn LinearOperator) -> Result<()> {
    if w.data.len() != op.range_len() {
        return Err(Error::arg(format!(
            "{} weights for an operator with {} rays",
            w.data.len(),
            op.range_len()
        )));
    }
    Ok(())
}
