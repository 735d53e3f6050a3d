use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// 2D fan-beam geometry with an equiangular (arc) detector centred on the
/// source.
///
/// The source for view `v` sits at `source_to_center_mm * (cos a, sin a)` with
/// `a = angles_rad[v]`; the central ray points at the rotation centre. Detector
/// element `k` sees the ray rotated by the fan angle
/// `(k - (n_dets - 1) / 2 + det_offset) * det_spacing_mm / source_to_det_mm`.
///
/// Image coordinates: the grid is centred on the rotation axis, columns grow
/// along +x and rows grow along -y (row 0 at the top).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FanBeamGeometry {
    pub n_dets: usize,
    pub n_views: usize,
    pub det_spacing_mm: f64,
    pub source_to_det_mm: f64,
    pub source_to_center_mm: f64,
    pub angles_rad: Vec<f64>,
    pub image_rows: usize,
    pub image_cols: usize,
    pub pixel_size_mm: f64,
    /// Lateral detector shift in units of detector elements. The quarter
    /// element default interlaces opposing views over a full turn.
    #[serde(default = "quarter_detector")]
    pub det_offset: f64,
}

pub const QUARTER_DETECTOR: f64 = 0.25;

fn quarter_detector() -> f64 {
    QUARTER_DETECTOR
}

impl FanBeamGeometry {
    /// Geometry with `n_views` angles regularly spaced over a full turn and a
    /// quarter-element detector offset.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_dets: usize,
        n_views: usize,
        det_spacing_mm: f64,
        source_to_det_mm: f64,
        source_to_center_mm: f64,
        image_rows: usize,
        image_cols: usize,
        pixel_size_mm: f64,
    ) -> Result<Self> {
        let angles_rad = (0..n_views)
            .map(|v| 2.0 * PI * v as f64 / n_views.max(1) as f64)
            .collect();
        let geom = FanBeamGeometry {
            n_dets,
            n_views,
            det_spacing_mm,
            source_to_det_mm,
            source_to_center_mm,
            angles_rad,
            image_rows,
            image_cols,
            pixel_size_mm,
            det_offset: QUARTER_DETECTOR,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// Full-scale scanner configuration: 736 detectors, 1152 views,
    /// 512x512 image at 0.69 mm.
    pub fn paper_scale() -> Self {
        Self::new(736, 1152, 1.2858, 1085.6, 595.0, 512, 512, 0.69).expect("valid preset")
    }

    /// Desk-scale default: 128x128 at 0.7 mm, 256 detectors x 288 views,
    /// distances scaled by 1/4.
    pub fn desk() -> Self {
        Self::new(256, 288, 1.0, 1085.6 / 4.0, 595.0 / 4.0, 128, 128, 0.7).expect("valid preset")
    }

    /// Desk geometry resized for an `n x n` image, keeping the fan covering the
    /// field of view.
    pub fn desk_for(n: usize, n_dets: usize, n_views: usize) -> Result<Self> {
        let pixel = 0.7;
        let dsd = 1085.6 / 4.0;
        let dso = 595.0 / 4.0;
        let half_diag = (n as f64) * pixel / 2.0 * 2f64.sqrt();
        let half_fan = (half_diag / dso).asin() * 1.05;
        let spacing = 2.0 * half_fan * dsd / (n_dets as f64 - 1.0).max(1.0);
        Self::new(n_dets, n_views, spacing, dsd, dso, n, n, pixel)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_dets == 0 || self.n_views == 0 {
            return Err(Error::arg(
                "geometry needs at least one detector and one view",
            ));
        }
        if self.angles_rad.len() != self.n_views {
            return Err(Error::arg(format!(
                "{} view angles for {} views",
                self.angles_rad.len(),
                self.n_views
            )));
        }
        if self.angles_rad.iter().any(|a| !a.is_finite()) {
            return Err(Error::arg("non-finite view angle"));
        }
        if self.image_rows == 0 || self.image_cols == 0 {
            return Err(Error::arg("image grid must be non-empty"));
        }
        for (name, v) in [
            ("det_spacing_mm", self.det_spacing_mm),
            ("source_to_det_mm", self.source_to_det_mm),
            ("source_to_center_mm", self.source_to_center_mm),
            ("pixel_size_mm", self.pixel_size_mm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be positive, got {v}")));
            }
        }
        if self.source_to_center_mm >= self.source_to_det_mm {
            return Err(Error::arg(
                "source_to_center_mm must be below source_to_det_mm",
            ));
        }
        let support = self.support_radius_mm();
        if support >= self.source_to_center_mm {
            return Err(Error::arg("image support reaches the source orbit"));
        }
        let needed = (support / self.source_to_center_mm).asin();
        let half_fan = self.fan_angle(self.n_dets - 1).min(-self.fan_angle(0));
        if half_fan + 1e-12 < needed {
            return Err(Error::arg(format!(
                "detector fan half-angle {:.4} rad does not cover the image support ({:.4} rad)",
                half_fan, needed
            )));
        }
        Ok(())
    }

    /// Radius of the circle circumscribing the image grid.
    pub fn support_radius_mm(&self) -> f64 {
        let w = self.image_cols as f64 * self.pixel_size_mm;
        let h = self.image_rows as f64 * self.pixel_size_mm;
        0.5 * (w * w + h * h).sqrt()
    }

    pub fn n_rays(&self) -> usize {
        self.n_views * self.n_dets
    }

    pub fn n_pixels(&self) -> usize {
        self.image_rows * self.image_cols
    }

    /// Angular pitch between neighbouring detector elements.
    pub fn det_angle_step(&self) -> f64 {
        self.det_spacing_mm / self.source_to_det_mm
    }

    pub fn fan_angle(&self, det: usize) -> f64 {
        (det as f64 - (self.n_dets as f64 - 1.0) / 2.0 + self.det_offset) * self.det_angle_step()
    }

    pub fn source(&self, view: usize) -> [f64; 2] {
        let a = self.angles_rad[view];
        [
            self.source_to_center_mm * a.cos(),
            self.source_to_center_mm * a.sin(),
        ]
    }

    /// Source position and unit direction of ray `(view, det)`.
    pub fn ray(&self, view: usize, det: usize) -> ([f64; 2], [f64; 2]) {
        let a = self.angles_rad[view] + self.fan_angle(det);
        (self.source(view), [-a.cos(), -a.sin()])
    }

    /// Stable short identifier derived from the serialized geometry.
    pub fn id(&self) -> String {
        let json = serde_json::to_vec(self).expect("geometry serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("geometry serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: FanBeamGeometry =
            serde_json::from_str(s).map_err(|e| Error::arg(format!("geometry JSON: {e}")))?;
        g.validate()?;
        Ok(g)
    }
}
