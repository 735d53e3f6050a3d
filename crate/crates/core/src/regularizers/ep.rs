use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tomo::Image;

/// φ(t) = δ²(|t/δ| − log(1 + |t/δ|)).
pub fn phi(t: f64, delta: f64) -> f64 {
    let a = (t / delta).abs();
    delta * delta * (a - a.ln_1p())
}

/// φ'(t) = t / (1 + |t/δ|).
pub fn phi_deriv(t: f64, delta: f64) -> f64 {
    t / (1.0 + (t / delta).abs())
}

/// Huber-type surrogate curvature ω(t) = φ'(t)/t = 1/(1 + |t/δ|).
pub fn ep_curvature(t: f64, delta: f64) -> f64 {
    1.0 / (1.0 + (t / delta).abs())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Neighborhood {
    #[serde(rename = "4-connected")]
    Four,
    #[default]
    #[serde(rename = "8-connected")]
    Eight,
}

impl Neighborhood {
    /// One offset per unordered neighbor pair.
    fn half_offsets(self) -> &'static [(isize, isize)] {
        match self {
            Neighborhood::Four => &[(0, 1), (1, 0)],
            Neighborhood::Eight => &[(0, 1), (1, 0), (1, 1), (1, -1)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpParams {
    pub delta: f64,
    #[serde(default)]
    pub neighborhood: Neighborhood,
    /// Per-pixel κ; uniform 1 when absent.
    #[serde(skip)]
    pub kappa: Option<Vec<f64>>,
}

impl EpParams {
    pub fn new(delta: f64) -> Self {
        EpParams {
            delta,
            neighborhood: Neighborhood::Eight,
            kappa: None,
        }
    }

    pub fn with_kappa(mut self, kappa: Vec<f64>) -> Self {
        self.kappa = Some(kappa);
        self
    }

    fn check(&self, x: &Image) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::arg(format!(
                "EP delta must be positive, got {}",
                self.delta
            )));
        }
        if let Some(k) = &self.kappa {
            if k.len() != x.len() {
                return Err(Error::arg(format!(
                    "kappa has {} entries, image has {}",
                    k.len(),
                    x.len()
                )));
            }
        }
        Ok(())
    }
}

/// Calls `f(k, κ_jκ_k)` for every neighbor k of pixel (r, c), both
/// directions of each pair.
#[inline]
fn for_neighbors(
    p: &EpParams,
    rows: usize,
    cols: usize,
    r: usize,
    c: usize,
    mut f: impl FnMut(usize, f64),
) {
    let j = r * cols + c;
    let kj = p.kappa.as_ref().map_or(1.0, |k| k[j]);
    for &(dr, dc) in p.neighborhood.half_offsets() {
        for s in [1isize, -1] {
            let rr = r as isize + s * dr;
            let cc = c as isize + s * dc;
            if rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                continue;
            }
            let k = rr as usize * cols + cc as usize;
            let kk = p.kappa.as_ref().map_or(1.0, |v| v[k]);
            f(k, kj * kk);
        }
    }
}

/// Σ_j Σ_{k∈N_j} κ_jκ_k φ(x_j − x_k): every unordered pair counted twice.
pub fn ep_value(x: &Image, p: &EpParams) -> Result<f64> {
    p.check(x)?;
    let (rows, cols) = (x.rows(), x.cols());
    let d = x.data();
    let per_row: Vec<f64> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let mut s = 0.0;
            for c in 0..cols {
                let j = r * cols + c;
                for_neighbors(p, rows, cols, r, c, |k, w| {
                    s += w * phi(d[j] - d[k], p.delta)
                });
            }
            s
        })
        .collect();
    Ok(per_row.iter().sum())
}

/// Gradient of [`ep_value`].
pub fn ep_gradient(x: &Image, p: &EpParams) -> Result<Vec<f64>> {
    Ok(ep_majorizer(x, p)?.1)
}

/// Value, gradient and the diagonal of a separable quadratic majorizer of
/// the EP regularizer at `x` (β not applied).
pub fn ep_majorizer(x: &Image, p: &EpParams) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    p.check(x)?;
    let (rows, cols) = (x.rows(), x.cols());
    let d = x.data();
    let mut grad = vec![0.0; rows * cols];
    let mut diag = vec![0.0; rows * cols];
    let per_row: Vec<f64> = grad
        .par_chunks_mut(cols)
        .zip(diag.par_chunks_mut(cols))
        .enumerate()
        .map(|(r, (g, h))| {
            let mut s = 0.0;
            for c in 0..cols {
                let j = r * cols + c;
                let (mut gj, mut hj) = (0.0, 0.0);
                for_neighbors(p, rows, cols, r, c, |k, w| {
                    let t = d[j] - d[k];
                    s += w * phi(t, p.delta);
                    gj += 2.0 * w * phi_deriv(t, p.delta);
                    hj += 4.0 * w * ep_curvature(t, p.delta);
                });
                g[c] = gj;
                h[c] = hj;
            }
            s
        })
        .collect();
    Ok((per_row.iter().sum(), grad, diag))
}
