use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tomo::LinearOperator;
use crate::ultra::PatchConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialWeighting {
    Uniform,
    /// Derived from the statistical weights (κ from Aᵀw / Aᵀ1).
    #[default]
    Certainty,
}

/// κ_j = sqrt((Aᵀw)_j / (Aᵀ1)_j); pixels no ray touches get 0.
pub fn kappa_map(op: &dyn LinearOperator, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != op.range_len() {
        return Err(Error::arg(format!(
            "weights have {} entries, operator range is {}",
            weights.len(),
            op.range_len()
        )));
    }
    let num = op.apply_adjoint_vec(weights);
    let den = op.apply_adjoint_vec(&vec![1.0; op.range_len()]);
    Ok(num
        .iter()
        .zip(&den)
        .map(|(&n, &d)| {
            if d > 0.0 {
                (n / d).max(0.0).sqrt()
            } else {
                0.0
            }
        })
        .collect())
}

/// τ_j = mean of κ² over patch j, normalized to mean 1 over patches.
/// An all-zero κ yields uniform weights.
pub fn tau_weights(kappa: &[f64], rows: usize, cols: usize, cfg: &PatchConfig) -> Result<Vec<f64>> {
    if kappa.len() != rows * cols {
        return Err(Error::arg("kappa map does not match image size"));
    }
    cfg.validate_for(rows, cols)?;
    let s = cfg.patch_side;
    let n = cfg.count(rows, cols);
    let mut tau: Vec<f64> = (0..n)
        .map(|j| {
            let (r0, c0) = cfg.origin(j, rows, cols);
            let mut acc = 0.0;
            for dr in 0..s {
                for dc in 0..s {
                    acc += kappa[(r0 + dr) * cols + c0 + dc].powi(2);
                }
            }
            acc / cfg.m() as f64
        })
        .collect();
    let mean = tau.iter().sum::<f64>() / n as f64;
    if mean > 0.0 {
        tau.iter_mut().for_each(|t| *t /= mean);
    } else {
        tau.iter_mut().for_each(|t| *t = 1.0);
    }
    Ok(tau)
}
