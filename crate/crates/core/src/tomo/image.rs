use crate::error::{Error, Result};

/// A 2D pixel grid, row-major, row 0 at the top.
///
/// Pixel values are in modified Hounsfield units (air 0, water 1000) unless a
/// caller states otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    pixel_size_mm: f64,
    data: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, pixel_size_mm: f64, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::arg(format!(
                "image must be non-empty, got {rows}x{cols}"
            )));
        }
        if !(pixel_size_mm > 0.0 && pixel_size_mm.is_finite()) {
            return Err(Error::arg(format!(
                "pixel size must be positive, got {pixel_size_mm}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::arg(format!(
                "pixel buffer has {} values, expected {}",
                data.len(),
                rows * cols
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite pixel at index {i}")));
        }
        Ok(Image {
            rows,
            cols,
            pixel_size_mm,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, pixel_size_mm: f64) -> Self {
        Self::filled(rows, cols, pixel_size_mm, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, pixel_size_mm: f64, value: f64) -> Self {
        assert!(rows > 0 && cols > 0 && pixel_size_mm > 0.0);
        Image {
            rows,
            cols,
            pixel_size_mm,
            data: vec![value; rows * cols],
        }
    }

    /// Same shape as `self`, new contents. Panics if the length is wrong.
    pub fn with_data(&self, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), self.data.len(), "pixel buffer length mismatch");
        Image {
            rows: self.rows,
            cols: self.cols,
            pixel_size_mm: self.pixel_size_mm,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixel_size_mm(&self) -> f64 {
        self.pixel_size_mm
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::arg(format!(
                "image shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    /// Rounds every pixel to the nearest `f32`, matching what the file
    /// container stores.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    /// Rectangular crop, `(row0, col0)` top-left.
    pub fn crop(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Result<Image> {
        if rows == 0 || cols == 0 || row0 + rows > self.rows || col0 + cols > self.cols {
            return Err(Error::arg(format!(
                "crop {rows}x{cols} at ({row0},{col0}) outside {}x{} image",
                self.rows, self.cols
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in row0..row0 + rows {
            let start = r * self.cols + col0;
            data.extend_from_slice(&self.data[start..start + cols]);
        }
        Ok(Image {
            rows,
            cols,
            pixel_size_mm: self.pixel_size_mm,
            data,
        })
    }
}

/// Post-log line integrals, one row per view.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    n_views: usize,
    n_dets: usize,
    data: Vec<f64>,
    geometry_id: String,
}

impl Sinogram {
    pub fn new(
        n_views: usize,
        n_dets: usize,
        data: Vec<f64>,
        geometry_id: impl Into<String>,
    ) -> Result<Self> {
        if n_views == 0 || n_dets == 0 {
            return Err(Error::arg("sinogram must be non-empty"));
        }
        if data.len() != n_views * n_dets {
            return Err(Error::arg(format!(
                "sinogram buffer has {} values, expected {}",
                data.len(),
                n_views * n_dets
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite sinogram value at index {i}"
            )));
        }
        Ok(Sinogram {
            n_views,
            n_dets,
            data,
            geometry_id: geometry_id.into(),
        })
    }

    pub fn zeros(n_views: usize, n_dets: usize, geometry_id: impl Into<String>) -> Self {
        Sinogram {
            n_views,
            n_dets,
            data: vec![0.0; n_views * n_dets],
            geometry_id: geometry_id.into(),
        }
    }

    pub fn with_data(&self, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            self.data.len(),
            "sinogram buffer length mismatch"
        );
        Sinogram {
            n_views: self.n_views,
            n_dets: self.n_dets,
            data,
            geometry_id: self.geometry_id.clone(),
        }
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn n_dets(&self) -> usize {
        self.n_dets
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn geometry_id(&self) -> &str {
        &self.geometry_id
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn view(&self, v: usize) -> &[f64] {
        &self.data[v * self.n_dets..(v + 1) * self.n_dets]
    }

    #[inline]
    pub fn get(&self, view: usize, det: usize) -> f64 {
        self.data[view * self.n_dets + det]
    }

    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}
