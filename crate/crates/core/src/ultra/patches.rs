use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tomo::Image;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchBoundary {
    /// Only patches lying fully inside the image are used.
    #[default]
    InteriorOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub patch_side: usize,
    pub stride: usize,
    #[serde(default)]
    pub boundary: PatchBoundary,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig::new(8, 1)
    }
}

impl PatchConfig {
    pub fn new(patch_side: usize, stride: usize) -> Self {
        PatchConfig {
            patch_side,
            stride,
            boundary: PatchBoundary::InteriorOnly,
        }
    }

    /// Patch vector length.
    pub fn m(&self) -> usize {
        self.patch_side * self.patch_side
    }

    pub fn validate_for(&self, rows: usize, cols: usize) -> Result<()> {
        if self.patch_side == 0 || self.stride == 0 {
            return Err(Error::arg("patch side and stride must be positive"));
        }
        if self.patch_side > rows || self.patch_side > cols {
            return Err(Error::arg(format!(
                "patch side {} exceeds image {rows}x{cols}",
                self.patch_side
            )));
        }
        Ok(())
    }

    /// Number of patch origins along rows and columns.
    pub fn grid(&self, rows: usize, cols: usize) -> (usize, usize) {
        (
            (rows - self.patch_side) / self.stride + 1,
            (cols - self.patch_side) / self.stride + 1,
        )
    }

    pub fn count(&self, rows: usize, cols: usize) -> usize {
        let (a, b) = self.grid(rows, cols);
        a * b
    }

    /// Top-left corner of patch `j`.
    pub fn origin(&self, j: usize, rows: usize, cols: usize) -> (usize, usize) {
        let (_, gc) = self.grid(rows, cols);
        ((j / gc) * self.stride, (j % gc) * self.stride)
    }
}

/// Patches as columns of an m×N matrix. Within a patch, entries run down
/// each column first; patches are ordered row-major by origin.
pub fn extract_patches(img: &Image, cfg: &PatchConfig) -> Result<DMatrix<f64>> {
    cfg.validate_for(img.rows(), img.cols())?;
    Ok(extract_patches_raw(img.data(), img.rows(), img.cols(), cfg))
}

pub fn extract_patches_raw(
    data: &[f64],
    rows: usize,
    cols: usize,
    cfg: &PatchConfig,
) -> DMatrix<f64> {
    let s = cfg.patch_side;
    let n = cfg.count(rows, cols);
    let mut out = DMatrix::zeros(cfg.m(), n);
    for j in 0..n {
        let (r0, c0) = cfg.origin(j, rows, cols);
        let mut col = out.column_mut(j);
        for dc in 0..s {
            for dr in 0..s {
                col[dc * s + dr] = data[(r0 + dr) * cols + c0 + dc];
            }
        }
    }
    out
}

/// Adjoint of patch extraction: sums each column back into its location.
pub fn accumulate_patches(
    patches: &DMatrix<f64>,
    rows: usize,
    cols: usize,
    cfg: &PatchConfig,
) -> Vec<f64> {
    let s = cfg.patch_side;
    let mut out = vec![0.0; rows * cols];
    for j in 0..patches.ncols() {
        let (r0, c0) = cfg.origin(j, rows, cols);
        let col = patches.column(j);
        for dc in 0..s {
            for dr in 0..s {
                out[(r0 + dr) * cols + c0 + dc] += col[dc * s + dr];
            }
        }
    }
    out
}

/// Diagonal of Σ_j w_j P_jᵀP_j (uniform weights when `weights` is None).
pub fn patch_coverage(
    rows: usize,
    cols: usize,
    cfg: &PatchConfig,
    weights: Option<&[f64]>,
) -> Vec<f64> {
    let s = cfg.patch_side;
    let mut out = vec![0.0; rows * cols];
    for j in 0..cfg.count(rows, cols) {
        let (r0, c0) = cfg.origin(j, rows, cols);
        let w = weights.map_or(1.0, |w| w[j]);
        for dr in 0..s {
            for dc in 0..s {
                out[(r0 + dr) * cols + c0 + dc] += w;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(rows: usize, cols: usize) -> Image {
        Image::new(
            rows,
            cols,
            1.0,
            (0..rows * cols).map(|i| i as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn tiling_patches() {
        let img = ramp(4, 4);
        let p = extract_patches(&img, &PatchConfig::new(2, 2)).unwrap();
        assert_eq!(p.shape(), (4, 4));
        // second patch starts at (0, 2): column-major [2, 6, 3, 7]
        assert_eq!(p.column(1).as_slice(), &[2.0, 6.0, 3.0, 7.0]);
        let mut seen: Vec<f64> = p.iter().copied().collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..16).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn full_size_patch_is_vectorized_image() {
        let img = ramp(3, 3);
        let p = extract_patches(&img, &PatchConfig::new(3, 1)).unwrap();
        assert_eq!(p.ncols(), 1);
        assert_eq!(
            p.column(0).as_slice(),
            &[0.0, 3.0, 6.0, 1.0, 4.0, 7.0, 2.0, 5.0, 8.0]
        );
    }

    #[test]
    fn stride_one_count_and_first_patch() {
        let img = ramp(5, 5);
        let p = extract_patches(&img, &PatchConfig::new(3, 1)).unwrap();
        assert_eq!(p.ncols(), 9);
        assert_eq!(
            p.column(0).as_slice(),
            &[0.0, 5.0, 10.0, 1.0, 6.0, 11.0, 2.0, 7.0, 12.0]
        );
    }

    #[test]
    fn oversized_patch_rejected() {
        assert!(matches!(
            extract_patches(&ramp(4, 6), &PatchConfig::new(5, 1)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn accumulate_is_adjoint_of_extract() {
        let (rows, cols) = (9, 7);
        let cfg = PatchConfig::new(3, 2);
        let x: Vec<f64> = (0..rows * cols)
            .map(|i| ((i * 37) % 11) as f64 - 5.0)
            .collect();
        let px = extract_patches_raw(&x, rows, cols, &cfg);
        let v = DMatrix::from_fn(px.nrows(), px.ncols(), |i, j| {
            ((i * 7 + j * 3) % 5) as f64 - 2.0
        });
        let lhs = px.dot(&v);
        let back = accumulate_patches(&v, rows, cols, &cfg);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
        let cover = patch_coverage(rows, cols, &cfg, None);
        let ones = accumulate_patches(&DMatrix::from_element(9, px.ncols(), 1.0), rows, cols, &cfg);
        assert_eq!(cover, ones);
    }
}
