//! Fan-beam filtered backprojection for the equiangular detector.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::geometry::FanBeamGeometry;
use super::image::{Image, Sinogram};
use super::projector::check_sino;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Ramp,
    #[default]
    Hann,
}

/// Frequency response of the fan-beam ramp kernel, zero-padded to `len`.
///
/// The kernel is the band-limited ramp sampled at the detector angular pitch
/// and rescaled by `(g / sin g)^2 / 2`, the equiangular correction; the
/// one-half accounts for every line being measured twice over a full turn.
fn filter_response(n_dets: usize, dgamma: f64, len: usize, kind: FilterKind) -> Vec<Complex<f64>> {
    let mut kernel = vec![Complex::new(0.0, 0.0); len];
    for n in 0..n_dets as isize {
        let h = if n == 0 {
            1.0 / (8.0 * dgamma * dgamma)
        } else if n % 2 == 0 {
            0.0
        } else {
            let g = n as f64 * dgamma;
            let ramp = -1.0 / (n as f64 * n as f64 * PI * PI * dgamma * dgamma);
            0.5 * (g / g.sin()).powi(2) * ramp
        };
        kernel[n as usize].re = h;
        if n > 0 {
            kernel[len - n as usize].re = h;
        }
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut kernel);
    if kind == FilterKind::Hann {
        for (k, v) in kernel.iter_mut().enumerate() {
            // 0 at DC, 1 at the detector Nyquist frequency
            let f = 2.0 * k.min(len - k) as f64 / len as f64;
            *v *= 0.5 * (1.0 + (PI * f).cos());
        }
    }
    kernel
}

/// Reconstructs an image from a full-turn fan-beam sinogram.
///
/// Cosine pre-weighting, per-view frequency-domain filtering, then
/// distance-weighted backprojection with linear detector interpolation.
/// Output units are the sinogram units divided by mm.
pub fn fbp(sino: &Sinogram, geom: &FanBeamGeometry, filter: FilterKind) -> Result<Image> {
    check_sino(sino, geom)?;
    if geom.n_views < 2 {
        return Err(Error::arg("fbp needs at least two views"));
    }
    let n_dets = geom.n_dets;
    let dgamma = geom.det_angle_step();
    let dso = geom.source_to_center_mm;
    let len = (2 * n_dets).next_power_of_two();
    let response = filter_response(n_dets, dgamma, len, filter);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let cos_w: Vec<f64> = (0..n_dets).map(|d| dso * geom.fan_angle(d).cos()).collect();

    let filtered: Vec<Vec<f64>> = (0..geom.n_views)
        .into_par_iter()
        .map(|v| {
            let mut buf = vec![Complex::new(0.0, 0.0); len];
            for (d, (b, w)) in buf.iter_mut().zip(&cos_w).enumerate() {
                b.re = sino.get(v, d) * w;
            }
            fwd.process(&mut buf);
            for (b, h) in buf.iter_mut().zip(&response) {
                *b *= h;
            }
            inv.process(&mut buf);
            let scale = dgamma / len as f64;
            buf[..n_dets].iter().map(|c| c.re * scale).collect()
        })
        .collect();

    let rows = geom.image_rows;
    let cols = geom.image_cols;
    let px = geom.pixel_size_mm;
    let dbeta = 2.0 * PI / geom.n_views as f64;
    let center = (n_dets as f64 - 1.0) / 2.0 - geom.det_offset;
    let mut data = vec![0.0; rows * cols];
    data.par_chunks_mut(cols).enumerate().for_each(|(r, row)| {
        let y = ((rows as f64 - 1.0) / 2.0 - r as f64) * px;
        for (c, out) in row.iter_mut().enumerate() {
            let x = (c as f64 - (cols as f64 - 1.0) / 2.0) * px;
            let mut acc = 0.0;
            for (v, q) in filtered.iter().enumerate() {
                let s = geom.source(v);
                let a = geom.angles_rad[v];
                let central = [-a.cos(), -a.sin()];
                let rel = [x - s[0], y - s[1]];
                let along = central[0] * rel[0] + central[1] * rel[1];
                let across = central[0] * rel[1] - central[1] * rel[0];
                let gamma = across.atan2(along);
                let pos = gamma / dgamma + center;
                if pos < 0.0 || pos > (n_dets - 1) as f64 {
                    continue;
                }
                let i0 = pos.floor() as usize;
                let frac = pos - i0 as f64;
                let val = if i0 + 1 < n_dets {
                    q[i0] * (1.0 - frac) + q[i0 + 1] * frac
                } else {
                    q[i0]
                };
                acc += val / (rel[0] * rel[0] + rel[1] * rel[1]);
            }
            *out = acc * dbeta;
        }
    });
    Image::new(rows, cols, px, data)
}
