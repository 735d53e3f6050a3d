//! Image quality metrics: RMSE, SNR, SSIM, ROI bias/noise, and the CSV/JSON
//! report formats built on them.

mod report;

pub use report::{
    read_metrics_csv, summarize, write_metrics_csv, MetricRow, MetricSummary, Quartiles, Summary,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tomo::Image;

fn sq_err(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// sqrt(mean((x̂ − x*)²)).
pub fn rmse(xhat: &Image, xstar: &Image) -> Result<f64> {
    Ok((sq_err(xhat, xstar)? / xhat.len() as f64).sqrt())
}

/// 10·log10(‖x*‖² / ‖x̂ − x*‖²) in dB; +∞ for an exact match.
pub fn snr(xhat: &Image, xstar: &Image) -> Result<f64> {
    let e = sq_err(xhat, xstar)?;
    let s: f64 = xstar.data().iter().map(|v| v * v).sum();
    if s == 0.0 {
        return Err(Error::arg("SNR needs a nonzero reference"));
    }
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (s / e).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    /// 11×11 Gaussian window, σ = 1.5, K1 = 0.01, K2 = 0.03, range 400 HU
    /// (the [800, 1200] HU display window).
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 400.0,
        }
    }
}

/// Normalized Gaussian-weighted local average along one axis; taps falling
/// outside the image are dropped and the remaining weights renormalized.
fn blur_axis(v: &[f64], rows: usize, cols: usize, taps: &[f64], along_rows: bool) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![0.0; v.len()];
    for i in 0..rows {
        for j in 0..cols {
            let (mut s, mut wsum) = (0.0, 0.0);
            for (t, w) in taps.iter().enumerate() {
                let d = t as isize - r;
                let (ii, jj) = if along_rows {
                    (i as isize + d, j as isize)
                } else {
                    (i as isize, j as isize + d)
                };
                if ii < 0 || jj < 0 || ii >= rows as isize || jj >= cols as isize {
                    continue;
                }
                s += w * v[ii as usize * cols + jj as usize];
                wsum += w;
            }
            out[i * cols + j] = s / wsum;
        }
    }
    out
}

fn local_mean(v: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    blur_axis(
        &blur_axis(v, rows, cols, taps, false),
        rows,
        cols,
        taps,
        true,
    )
}

/// Mean structural similarity over Gaussian-weighted windows centred on
/// every pixel.
pub fn ssim(xhat: &Image, xstar: &Image, cfg: &SsimConfig) -> Result<f64> {
    xhat.check_same_shape(xstar)?;
    if cfg.window == 0 || cfg.window % 2 == 0 || !(cfg.sigma > 0.0) || !(cfg.dynamic_range > 0.0) {
        return Err(Error::arg(
            "SSIM needs an odd window, positive sigma and positive range",
        ));
    }
    let (rows, cols) = (xhat.rows(), xhat.cols());
    let r = (cfg.window / 2) as f64;
    let taps: Vec<f64> = (0..cfg.window)
        .map(|t| (-(t as f64 - r).powi(2) / (2.0 * cfg.sigma * cfg.sigma)).exp())
        .collect();
    let x = xhat.data();
    let y = xstar.data();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = local_mean(x, rows, cols, &taps);
    let my = local_mean(y, rows, cols, &taps);
    let mxx = local_mean(&prod(x, x), rows, cols, &taps);
    let myy = local_mean(&prod(y, y), rows, cols, &taps);
    let mxy = local_mean(&prod(x, y), rows, cols, &taps);
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let total: f64 = (0..x.len())
        .map(|j| {
            let vx = mxx[j] - mx[j] * mx[j];
            let vy = myy[j] - my[j] * my[j];
            let cxy = mxy[j] - mx[j] * my[j];
            ((2.0 * mx[j] * my[j] + c1) * (2.0 * cxy + c2))
                / ((mx[j] * mx[j] + my[j] * my[j] + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / x.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub label: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasStd {
    pub bias: f64,
    pub std: f64,
    /// sqrt(bias² + std²).
    pub bs_index: f64,
}

/// ROI bias (mean of x̂ − x*) and sample standard deviation of x̂.
pub fn bias_std(xhat: &Image, xstar: &Image, roi: &RoiSpec) -> Result<BiasStd> {
    xhat.check_same_shape(xstar)?;
    if roi.rows == 0
        || roi.cols == 0
        || roi.row0 + roi.rows > xhat.rows()
        || roi.col0 + roi.cols > xhat.cols()
    {
        return Err(Error::arg(format!(
            "ROI {:?} outside a {}x{} image",
            roi.label,
            xhat.rows(),
            xhat.cols()
        )));
    }
    let a = xhat.crop(roi.row0, roi.col0, roi.rows, roi.cols)?;
    let b = xstar.crop(roi.row0, roi.col0, roi.rows, roi.cols)?;
    let n = a.len() as f64;
    let bias = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| p - q)
        .sum::<f64>()
        / n;
    let mean = a.data().iter().sum::<f64>() / n;
    let std = if a.len() > 1 {
        (a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(BiasStd {
        bias,
        std,
        bs_index: bias.hypot(std),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(
            rows,
            cols,
            1.0,
            (0..rows * cols)
                .map(|_| rng.random_range(800.0..1200.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rmse_examples() {
        let x = random(5, 4, 1);
        assert_eq!(rmse(&x, &x).unwrap(), 0.0);
        assert!((rmse(&x.map(|v| v + 3.0), &x).unwrap() - 3.0).abs() < 1e-12);
        let y = random(5, 4, 2);
        let mut s = 0.0;
        for i in 0..20 {
            s += (x.data()[i] - y.data()[i]).powi(2);
        }
        assert!((rmse(&x, &y).unwrap() - (s / 20.0).sqrt()).abs() < 1e-12);
        assert!(rmse(&x, &random(4, 5, 1)).is_err());
    }

    #[test]
    fn snr_examples() {
        let xs = Image::new(1, 2, 1.0, vec![60.0, 80.0]).unwrap();
        let xh = Image::new(1, 2, 1.0, vec![61.0, 80.0]).unwrap();
        assert!((snr(&xh, &xs).unwrap() - 40.0).abs() < 1e-12);
        assert!((snr(&xh.map(|v| 3.0 * v), &xs.map(|v| 3.0 * v)).unwrap() - 40.0).abs() < 1e-9);
        assert_eq!(snr(&xs, &xs).unwrap(), f64::INFINITY);
        assert!(snr(&xs, &Image::zeros(1, 2, 1.0)).is_err());
    }

    /// Literal SSIM: per-pixel windowed statistics by direct summation.
    fn ssim_literal(x: &Image, y: &Image, cfg: &SsimConfig) -> f64 {
        let (rows, cols) = (x.rows() as isize, x.cols() as isize);
        let r = (cfg.window / 2) as isize;
        let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
        let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
        let mut total = 0.0;
        for i in 0..rows {
            for j in 0..cols {
                let (mut w, mut sx, mut sy, mut sxx, mut syy, mut sxy) =
                    (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for di in -r..=r {
                    for dj in -r..=r {
                        let (ii, jj) = (i + di, j + dj);
                        if ii < 0 || jj < 0 || ii >= rows || jj >= cols {
                            continue;
                        }
                        let g =
                            (-((di * di + dj * dj) as f64) / (2.0 * cfg.sigma * cfg.sigma)).exp();
                        let (a, b) = (
                            x.get(ii as usize, jj as usize),
                            y.get(ii as usize, jj as usize),
                        );
                        w += g;
                        sx += g * a;
                        sy += g * b;
                        sxx += g * a * a;
                        syy += g * b * b;
                        sxy += g * a * b;
                    }
                }
                let (mx, my) = (sx / w, sy / w);
                let (vx, vy, cxy) = (sxx / w - mx * mx, syy / w - my * my, sxy / w - mx * my);
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        total / (rows * cols) as f64
    }

    #[test]
    fn ssim_examples() {
        let cfg = SsimConfig::default();
        let x = random(8, 8, 3);
        assert!((ssim(&x, &x, &cfg).unwrap() - 1.0).abs() < 1e-12);
        // Anti-correlated texture on a shared background.
        let mut a = Image::filled(16, 16, 1.0, 1000.0);
        let mut b = a.clone();
        for i in 0..16 {
            for j in 0..16 {
                let s = if (i + j) % 2 == 0 { 100.0 } else { -100.0 };
                a.set(i, j, 1000.0 + s);
                b.set(i, j, 1000.0 - s);
            }
        }
        assert!(ssim(&a, &b, &cfg).unwrap() < 0.0);
        let y = random(8, 8, 4);
        assert!((ssim(&x, &y, &cfg).unwrap() - ssim_literal(&x, &y, &cfg)).abs() < 1e-9);
        let big = (random(20, 17, 5), random(20, 17, 6));
        assert!(
            (ssim(&big.0, &big.1, &cfg).unwrap() - ssim_literal(&big.0, &big.1, &cfg)).abs() < 1e-9
        );
    }

    #[test]
    fn bias_std_examples() {
        let c = Image::filled(6, 6, 1.0, 1000.0);
        let roi = RoiSpec {
            row0: 1,
            col0: 2,
            rows: 3,
            cols: 4,
            label: "a".into(),
        };
        let r = bias_std(&c, &c, &roi).unwrap();
        assert_eq!((r.bias, r.std, r.bs_index), (0.0, 0.0, 0.0));
        let r = bias_std(&c.map(|v| v + 3.0), &c, &roi).unwrap();
        assert_eq!((r.bias, r.std, r.bs_index), (3.0, 0.0, 3.0));
        let (x, y) = (random(6, 6, 1), random(6, 6, 2));
        let r = bias_std(&x, &y, &roi).unwrap();
        let vals: Vec<f64> = (1..4)
            .flat_map(|i| (2..6).map(move |j| (i, j)))
            .map(|(i, j)| x.get(i, j))
            .collect();
        let diffs: f64 = (1..4)
            .flat_map(|i| (2..6).map(move |j| (i, j)))
            .map(|(i, j)| x.get(i, j) - y.get(i, j))
            .sum();
        let mean = vals.iter().sum::<f64>() / 12.0;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 11.0).sqrt();
        assert!((r.bias - diffs / 12.0).abs() < 1e-12);
        assert!((r.std - std).abs() < 1e-12);
        assert!(bias_std(&x, &y, &RoiSpec { rows: 6, ..roi }).is_err());
    }

    proptest! {
        #[test]
        fn rmse_and_snr_are_consistent(seed in any::<u64>()) {
            let x = random(7, 5, seed);
            let y = random(7, 5, seed ^ 9);
            let e = rmse(&x, &y).unwrap();
            let norm = y.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            let s = snr(&x, &y).unwrap();
            prop_assert!((s - 20.0 * (norm / (e * 35f64.sqrt())).log10()).abs() < 1e-9);
            let sq: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum();
            prop_assert!((e * e * 35.0 - sq).abs() <= 1e-9 * sq);
        }

        #[test]
        fn rmse_invariant_under_pixel_permutation(seed in any::<u64>()) {
            let x = random(6, 6, seed);
            let y = random(6, 6, seed ^ 3);
            let perm = |v: &[f64]| -> Vec<f64> { (0..36).map(|i| v[(i * 7) % 36]).collect() };
            let xp = x.with_data(perm(x.data()));
            let yp = y.with_data(perm(y.data()));
            prop_assert!((rmse(&x, &y).unwrap() - rmse(&xp, &yp).unwrap()).abs() < 1e-9);
            prop_assert!((snr(&x, &y).unwrap() - snr(&xp, &yp).unwrap()).abs() < 1e-9);
        }
    }
}
