use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::geometry::FanBeamGeometry;
use super::image::{dot, norm_sq};
use super::projector::{FanBeamProjector, LinearOperator};
use crate::error::{Error, Result};

/// Power-iteration estimate of the largest eigenvalue of `A^T W A`.
///
/// Returns the largest Rayleigh quotient seen; for a positive semidefinite
/// operator the quotient grows monotonically along the power sequence, so the
/// estimate never decreases with `iters`.
pub fn power_iteration(
    op: &dyn LinearOperator,
    weights: &[f64],
    iters: usize,
    seed: u64,
) -> Result<f64> {
    if iters == 0 {
        return Err(Error::arg("power iteration needs iters >= 1"));
    }
    if weights.len() != op.range_len() {
        return Err(Error::arg(format!(
            "{} weights for an operator with {} outputs",
            weights.len(),
            op.range_len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..op.domain_len())
        .map(|_| rng.random::<f64>() + 0.5)
        .collect();
    let n = norm_sq(&x).sqrt();
    x.iter_mut().for_each(|v| *v /= n);

    let mut best = 0.0_f64;
    let mut ax = vec![0.0; op.range_len()];
    let mut mx = vec![0.0; op.domain_len()];
    for _ in 0..iters {
        op.apply(&x, &mut ax);
        ax.iter_mut().zip(weights).for_each(|(a, w)| *a *= w);
        op.apply_adjoint(&ax, &mut mx);
        let rq = dot(&x, &mx) / norm_sq(&x);
        best = best.max(rq);
        let nm = norm_sq(&mx).sqrt();
        if nm == 0.0 {
            break;
        }
        x.iter_mut().zip(&mx).for_each(|(xi, m)| *xi = m / nm);
    }
    Ok(best)
}

/// Largest eigenvalue estimate of `A^T diag(weights) A` for the fan-beam
/// operator of `geom`.
pub fn operator_norm_sq(
    geom: &FanBeamGeometry,
    weights: &[f64],
    iters: usize,
    seed: u64,
) -> Result<f64> {
    let op = FanBeamProjector::new(geom)?;
    power_iteration(&op, weights, iters, seed)
}
