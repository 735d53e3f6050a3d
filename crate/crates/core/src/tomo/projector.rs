//! Ray-driven fan-beam projector with exact ray/pixel intersection lengths.
//!
//! Every ray is traced through the pixel grid with an incremental Siddon
//! traversal. The same traversal feeds the forward and adjoint paths, so the
//! pair is an exact transpose up to floating-point summation order.

use rayon::prelude::*;

use super::geometry::FanBeamGeometry;
use super::image::{Image, Sinogram};
use crate::error::{Error, Result};

/// A linear map between flat `f64` buffers with an explicit adjoint.
pub trait LinearOperator: Sync {
    fn domain_len(&self) -> usize;
    fn range_len(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]);

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.range_len()];
        self.apply(x, &mut out);
        out
    }

    fn apply_adjoint_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.domain_len()];
        self.apply_adjoint(y, &mut out);
        out
    }
}

/// Identity map on `n` values; stands in for `A` in solver unit tests.
#[derive(Clone, Copy, Debug)]
pub struct IdentityOperator(pub usize);

impl LinearOperator for IdentityOperator {
    fn domain_len(&self) -> usize {
        self.0
    }
    fn range_len(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }
}

/// Views handled by one backprojection work unit. Fixed so that the partial
/// image reduction order never depends on the thread count.
const VIEWS_PER_CHUNK: usize = 8;

/// Cache the sparse system matrix when it stays below this many nonzeros.
const MAX_CACHED_NNZ: usize = 40_000_000;

/// Walks the pixels crossed by ray `(view, det)`, calling `visit(pixel, length_mm)`
/// for every non-degenerate intersection, in order along the ray.
pub fn trace_ray(
    geom: &FanBeamGeometry,
    view: usize,
    det: usize,
    mut visit: impl FnMut(usize, f64),
) {
    let (src, dir) = geom.ray(view, det);
    let px = geom.pixel_size_mm;
    let cols = geom.image_cols;
    let rows = geom.image_rows;
    let xmin = -0.5 * cols as f64 * px;
    let xmax = -xmin;
    let ymax = 0.5 * rows as f64 * px;
    let ymin = -ymax;
    let t_end = geom.source_to_det_mm;

    let mut t_in = 0.0_f64;
    let mut t_out = t_end;
    for (s, d, lo, hi) in [(src[0], dir[0], xmin, xmax), (src[1], dir[1], ymin, ymax)] {
        if d.abs() < 1e-15 {
            if s <= lo || s >= hi {
                return;
            }
        } else {
            let a = (lo - s) / d;
            let b = (hi - s) / d;
            t_in = t_in.max(a.min(b));
            t_out = t_out.min(a.max(b));
        }
    }
    let min_len = 1e-10 * px;
    if t_out - t_in <= min_len {
        return;
    }

    let x0 = src[0] + t_in * dir[0];
    let y0 = src[1] + t_in * dir[1];
    let mut col = (((x0 - xmin) / px).floor() as isize).clamp(0, cols as isize - 1);
    let mut row = (((ymax - y0) / px).floor() as isize).clamp(0, rows as isize - 1);

    let (step_c, mut tx_next, dtx) = if dir[0] > 1e-15 {
        (
            1,
            (xmin + (col + 1) as f64 * px - src[0]) / dir[0],
            px / dir[0],
        )
    } else if dir[0] < -1e-15 {
        (-1, (xmin + col as f64 * px - src[0]) / dir[0], -px / dir[0])
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    };
    // rows increase downward, i.e. towards -y
    let (step_r, mut ty_next, dty) = if dir[1] > 1e-15 {
        (-1, (ymax - row as f64 * px - src[1]) / dir[1], px / dir[1])
    } else if dir[1] < -1e-15 {
        (
            1,
            (ymax - (row + 1) as f64 * px - src[1]) / dir[1],
            -px / dir[1],
        )
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    };

    let mut t = t_in;
    loop {
        let t_next = tx_next.min(ty_next).min(t_out);
        let len = t_next - t;
        if len > min_len {
            visit(row as usize * cols + col as usize, len);
        }
        t = t_next;
        if t >= t_out {
            break;
        }
        if tx_next <= ty_next {
            col += step_c;
            tx_next += dtx;
            if col < 0 || col >= cols as isize {
                break;
            }
        } else {
            row += step_r;
            ty_next += dty;
            if row < 0 || row >= rows as isize {
                break;
            }
        }
    }
}

/// Compressed sparse rows plus the transposed (column) layout of `A`.
#[derive(Debug)]
struct SystemMatrix {
    row_ptr: Vec<usize>,
    row_cols: Vec<u32>,
    row_vals: Vec<f64>,
    col_ptr: Vec<usize>,
    col_rows: Vec<u32>,
    col_vals: Vec<f64>,
}

impl SystemMatrix {
    fn build(geom: &FanBeamGeometry) -> Self {
        let n_rays = geom.n_rays();
        let n_pix = geom.n_pixels();
        let per_view: Vec<(Vec<usize>, Vec<u32>, Vec<f64>)> = (0..geom.n_views)
            .into_par_iter()
            .map(|v| {
                let mut counts = Vec::with_capacity(geom.n_dets);
                let mut cols = Vec::new();
                let mut vals = Vec::new();
                for d in 0..geom.n_dets {
                    let before = cols.len();
                    trace_ray(geom, v, d, |p, len| {
                        cols.push(p as u32);
                        vals.push(len);
                    });
                    counts.push(cols.len() - before);
                }
                (counts, cols, vals)
            })
            .collect();

        let nnz: usize = per_view.iter().map(|(_, c, _)| c.len()).sum();
        let mut row_ptr = Vec::with_capacity(n_rays + 1);
        let mut row_cols = Vec::with_capacity(nnz);
        let mut row_vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for (counts, cols, vals) in per_view {
            let mut acc = *row_ptr.last().unwrap();
            for c in counts {
                acc += c;
                row_ptr.push(acc);
            }
            row_cols.extend_from_slice(&cols);
            row_vals.extend_from_slice(&vals);
        }

        let mut col_ptr = vec![0usize; n_pix + 1];
        for &c in &row_cols {
            col_ptr[c as usize + 1] += 1;
        }
        for j in 0..n_pix {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut fill = col_ptr.clone();
        let mut col_rows = vec![0u32; nnz];
        let mut col_vals = vec![0.0; nnz];
        for r in 0..n_rays {
            for k in row_ptr[r]..row_ptr[r + 1] {
                let c = row_cols[k] as usize;
                col_rows[fill[c]] = r as u32;
                col_vals[fill[c]] = row_vals[k];
                fill[c] += 1;
            }
        }
        SystemMatrix {
            row_ptr,
            row_cols,
            row_vals,
            col_ptr,
            col_rows,
            col_vals,
        }
    }
}

/// Fan-beam system operator `A` mapping image pixels to line integrals in
/// `mm * pixel value`.
#[derive(Debug)]
pub struct FanBeamProjector {
    geom: FanBeamGeometry,
    matrix: Option<SystemMatrix>,
}

impl FanBeamProjector {
    /// Builds the projector, caching the sparse system matrix when it fits the
    /// memory budget.
    pub fn new(geom: &FanBeamGeometry) -> Result<Self> {
        geom.validate()?;
        let est_nnz = geom.n_rays() as f64 * 1.5 * (geom.image_rows.max(geom.image_cols) as f64);
        if est_nnz < MAX_CACHED_NNZ as f64 {
            Ok(Self::cached(geom)?)
        } else {
            Ok(Self::matrix_free(geom)?)
        }
    }

    /// Traces rays on every application, holding no matrix.
    pub fn matrix_free(geom: &FanBeamGeometry) -> Result<Self> {
        geom.validate()?;
        Ok(FanBeamProjector {
            geom: geom.clone(),
            matrix: None,
        })
    }

    pub fn cached(geom: &FanBeamGeometry) -> Result<Self> {
        geom.validate()?;
        Ok(FanBeamProjector {
            geom: geom.clone(),
            matrix: Some(SystemMatrix::build(geom)),
        })
    }

    pub fn geometry(&self) -> &FanBeamGeometry {
        &self.geom
    }

    pub fn is_cached(&self) -> bool {
        self.matrix.is_some()
    }

    pub fn nnz(&self) -> Option<usize> {
        self.matrix.as_ref().map(|m| m.row_vals.len())
    }

    pub fn project(&self, image: &Image) -> Result<Sinogram> {
        check_image(image, &self.geom)?;
        let data = self.apply_vec(image.data());
        Sinogram::new(self.geom.n_views, self.geom.n_dets, data, self.geom.id())
    }

    pub fn back_project(&self, sino: &Sinogram) -> Result<Image> {
        check_sino(sino, &self.geom)?;
        let data = self.apply_adjoint_vec(sino.data());
        Image::new(
            self.geom.image_rows,
            self.geom.image_cols,
            self.geom.pixel_size_mm,
            data,
        )
    }
}

impl LinearOperator for FanBeamProjector {
    fn domain_len(&self) -> usize {
        self.geom.n_pixels()
    }

    fn range_len(&self) -> usize {
        self.geom.n_rays()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.domain_len());
        assert_eq!(out.len(), self.range_len());
        let n_dets = self.geom.n_dets;
        match &self.matrix {
            Some(m) => out.par_chunks_mut(n_dets).enumerate().for_each(|(v, row)| {
                for (d, o) in row.iter_mut().enumerate() {
                    let r = v * n_dets + d;
                    let mut acc = 0.0;
                    for k in m.row_ptr[r]..m.row_ptr[r + 1] {
                        acc += m.row_vals[k] * x[m.row_cols[k] as usize];
                    }
                    *o = acc;
                }
            }),
            None => out.par_chunks_mut(n_dets).enumerate().for_each(|(v, row)| {
                for (d, o) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    trace_ray(&self.geom, v, d, |p, len| acc += len * x[p]);
                    *o = acc;
                }
            }),
        }
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        assert_eq!(y.len(), self.range_len());
        assert_eq!(out.len(), self.domain_len());
        match &self.matrix {
            Some(m) => out.par_chunks_mut(1024).enumerate().for_each(|(chunk, o)| {
                for (i, v) in o.iter_mut().enumerate() {
                    let j = chunk * 1024 + i;
                    let mut acc = 0.0;
                    for k in m.col_ptr[j]..m.col_ptr[j + 1] {
                        acc += m.col_vals[k] * y[m.col_rows[k] as usize];
                    }
                    *v = acc;
                }
            }),
            None => {
                let n_dets = self.geom.n_dets;
                let n_chunks = self.geom.n_views.div_ceil(VIEWS_PER_CHUNK);
                let partials: Vec<Vec<f64>> = (0..n_chunks)
                    .into_par_iter()
                    .map(|c| {
                        let mut acc = vec![0.0; out.len()];
                        let end = ((c + 1) * VIEWS_PER_CHUNK).min(self.geom.n_views);
                        for v in c * VIEWS_PER_CHUNK..end {
                            for d in 0..n_dets {
                                let val = y[v * n_dets + d];
                                if val != 0.0 {
                                    trace_ray(&self.geom, v, d, |p, len| acc[p] += len * val);
                                }
                            }
                        }
                        acc
                    })
                    .collect();
                out.fill(0.0);
                for p in &partials {
                    for (o, v) in out.iter_mut().zip(p) {
                        *o += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn check_image(image: &Image, geom: &FanBeamGeometry) -> Result<()> {
    if image.rows() != geom.image_rows || image.cols() != geom.image_cols {
        return Err(Error::arg(format!(
            "image is {}x{} but geometry expects {}x{}",
            image.rows(),
            image.cols(),
            geom.image_rows,
            geom.image_cols
        )));
    }
    Ok(())
}

pub(crate) fn check_sino(sino: &Sinogram, geom: &FanBeamGeometry) -> Result<()> {
    if sino.n_views() != geom.n_views || sino.n_dets() != geom.n_dets {
        return Err(Error::arg(format!(
            "sinogram is {}x{} but geometry expects {}x{}",
            sino.n_views(),
            sino.n_dets(),
            geom.n_views,
            geom.n_dets
        )));
    }
    Ok(())
}

/// Line integrals of `image` along every ray of `geom` (matrix-free).
pub fn forward_project(image: &Image, geom: &FanBeamGeometry) -> Result<Sinogram> {
    FanBeamProjector::matrix_free(geom)?.project(image)
}

/// Exact adjoint of [`forward_project`].
pub fn back_project(sino: &Sinogram, geom: &FanBeamGeometry) -> Result<Image> {
    FanBeamProjector::matrix_free(geom)?.back_project(sino)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_geom() -> FanBeamGeometry {
        FanBeamGeometry::desk_for(16, 32, 24).unwrap()
    }

    #[test]
    fn zero_image_gives_zero_sinogram() {
        let g = small_geom();
        let s = forward_project(&Image::zeros(16, 16, g.pixel_size_mm), &g).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
        let b = back_project(&Sinogram::zeros(g.n_views, g.n_dets, g.id()), &g).unwrap();
        assert!(b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_an_argument_error() {
        let g = small_geom();
        let err = forward_project(&Image::zeros(8, 16, 0.7), &g).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
        let err = back_project(&Sinogram::zeros(3, g.n_dets, "x"), &g).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn cached_and_matrix_free_agree() {
        let g = small_geom();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..g.n_pixels()).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..g.n_rays()).map(|_| rng.random::<f64>()).collect();
        let a = FanBeamProjector::cached(&g).unwrap();
        let b = FanBeamProjector::matrix_free(&g).unwrap();
        assert_eq!(a.apply_vec(&x), b.apply_vec(&x));
        for (u, v) in a.apply_adjoint_vec(&y).iter().zip(b.apply_adjoint_vec(&y)) {
            assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn single_bin_backprojects_onto_its_ray() {
        let g = small_geom();
        let (view, det) = (5, 13);
        let mut touched = vec![false; g.n_pixels()];
        trace_ray(&g, view, det, |p, _| touched[p] = true);
        assert!(touched.iter().any(|&t| t));
        let mut s = Sinogram::zeros(g.n_views, g.n_dets, g.id());
        s.data_mut()[view * g.n_dets + det] = 1.0;
        let img = back_project(&s, &g).unwrap();
        for (p, &v) in img.data().iter().enumerate() {
            if touched[p] {
                assert!(v > 0.0);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn chord_length_matches_geometry() {
        // The central ray crosses the full grid width along a grid axis.
        let mut g = FanBeamGeometry::new(33, 4, 2.0, 300.0, 150.0, 16, 16, 1.0).unwrap();
        g.det_offset = 0.0;
        let mut total = 0.0;
        trace_ray(&g, 0, 16, |_, len| total += len);
        assert!((total - 16.0).abs() < 1e-9, "{total}");
    }
}
