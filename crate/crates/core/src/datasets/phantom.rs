use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tomo::Image;

/// One additive ellipse, centre and semi-axes in mm from the image centre
/// (+x right, +y up).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center_mm: [f64; 2],
    pub axes_mm: [f64; 2],
    pub rotation_deg: f64,
    pub value_hu: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let dx = x - self.center_mm[0];
        let dy = y - self.center_mm[1];
        let u = (dx * c + dy * s) / self.axes_mm[0];
        let v = (-dx * s + dy * c) / self.axes_mm[1];
        u * u + v * v <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipsePhantomSpec {
    pub ellipses: Vec<Ellipse>,
    pub background_hu: f64,
    pub rows: usize,
    pub cols: usize,
    pub pixel_size_mm: f64,
    /// Clamp range applied after summation, keeping attenuation nonnegative.
    #[serde(default)]
    pub clamp_hu: Option<[f64; 2]>,
}

impl EllipsePhantomSpec {
    /// Rasterizes by evaluating the ellipse sum at every pixel centre.
    pub fn render(&self) -> Result<Image> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::arg("phantom must be non-empty"));
        }
        let mut img = Image::zeros(self.rows, self.cols, self.pixel_size_mm);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let (x, y) = pixel_center(self.rows, self.cols, self.pixel_size_mm, r, c);
                let mut v = self.background_hu;
                for e in &self.ellipses {
                    if e.contains(x, y) {
                        v += e.value_hu;
                    }
                }
                if let Some([lo, hi]) = self.clamp_hu {
                    v = v.clamp(lo, hi);
                }
                img.set(r, c, v);
            }
        }
        Ok(img)
    }
}

pub(crate) fn pixel_center(rows: usize, cols: usize, px: f64, r: usize, c: usize) -> (f64, f64) {
    (
        (c as f64 - (cols as f64 - 1.0) / 2.0) * px,
        ((rows as f64 - 1.0) / 2.0 - r as f64) * px,
    )
}

/// Shepp-Logan ellipse table: value, semi-axes (x, y), centre (x, y), angle in
/// degrees, in units of the image half-width.
const SHEPP_LOGAN: [[f64; 6]; 10] = [
    [2.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.98, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.02, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.02, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.01, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.01, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.01, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.01, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.01, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.01, 0.023, 0.046, 0.06, -0.605, 0.0],
];

/// HU per unit of the Shepp-Logan table: skull 2000, brain around 1000.
pub const SHEPP_LOGAN_HU_SCALE: f64 = 1000.0;

pub fn shepp_logan_spec(n: usize, pixel_size_mm: f64) -> EllipsePhantomSpec {
    let half = n as f64 * pixel_size_mm / 2.0;
    let ellipses = SHEPP_LOGAN
        .iter()
        .map(|&[v, a, b, x, y, phi]| Ellipse {
            center_mm: [x * half, y * half],
            axes_mm: [a * half, b * half],
            rotation_deg: phi,
            value_hu: v * SHEPP_LOGAN_HU_SCALE,
        })
        .collect();
    EllipsePhantomSpec {
        ellipses,
        background_hu: 0.0,
        rows: n,
        cols: n,
        pixel_size_mm,
        clamp_hu: None,
    }
}

/// Canonical 10-ellipse Shepp-Logan phantom at 0.7 mm pixels, in HU.
pub fn shepp_logan(n: usize) -> Result<Image> {
    if n < 16 {
        return Err(Error::arg(format!("shepp_logan needs n >= 16, got {n}")));
    }
    shepp_logan_spec(n, 0.7).render()
}

/// Parameter ranges for randomized body-like phantoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomRanges {
    pub size: usize,
    pub pixel_size_mm: f64,
    /// Body semi-axes as a fraction of the field-of-view radius.
    pub body_axis_frac: [f64; 2],
    pub body_hu: [f64; 2],
    pub n_soft: [usize; 2],
    pub soft_contrast_hu: [f64; 2],
    pub n_bone: [usize; 2],
    pub bone_contrast_hu: [f64; 2],
    pub n_lung: [usize; 2],
    pub lung_contrast_hu: [f64; 2],
    pub clamp_hu: [f64; 2],
}

impl PhantomRanges {
    pub fn desk(size: usize) -> Self {
        PhantomRanges {
            size,
            pixel_size_mm: 0.7,
            body_axis_frac: [0.62, 0.9],
            body_hu: [960.0, 1040.0],
            n_soft: [3, 8],
            soft_contrast_hu: [20.0, 150.0],
            n_bone: [0, 3],
            bone_contrast_hu: [400.0, 900.0],
            n_lung: [0, 2],
            lung_contrast_hu: [-750.0, -500.0],
            clamp_hu: [0.0, 2200.0],
        }
    }
}

fn pick_usize(rng: &mut ChaCha8Rng, r: [usize; 2]) -> usize {
    rng.random_range(r[0]..=r[1])
}

fn pick(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Randomized body phantom spec: a water-like body ellipse holding soft
/// tissue, bone and lung-like inserts.
pub fn random_phantom_spec(ranges: &PhantomRanges, seed: u64) -> EllipsePhantomSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fov = ranges.size as f64 * ranges.pixel_size_mm / 2.0;
    let ax = pick(&mut rng, ranges.body_axis_frac) * fov;
    let ay = pick(&mut rng, ranges.body_axis_frac) * fov;
    let body = Ellipse {
        center_mm: [0.0, 0.0],
        axes_mm: [ax, ay],
        rotation_deg: pick(&mut rng, [-20.0, 20.0]),
        value_hu: pick(&mut rng, ranges.body_hu),
    };
    let mut ellipses = vec![body.clone()];
    let mut insert = |rng: &mut ChaCha8Rng, size_frac: [f64; 2], value: f64| {
        let r = pick(rng, [0.0, 0.7]);
        let th = pick(rng, [0.0, std::f64::consts::TAU]);
        let e = Ellipse {
            center_mm: [r * ax * th.cos(), r * ay * th.sin()],
            axes_mm: [pick(rng, size_frac) * fov, pick(rng, size_frac) * fov],
            rotation_deg: pick(rng, [0.0, 180.0]),
            value_hu: value,
        };
        ellipses.push(e);
    };
    for _ in 0..pick_usize(&mut rng, ranges.n_lung) {
        let v = pick(&mut rng, ranges.lung_contrast_hu);
        insert(&mut rng, [0.12, 0.3], v);
    }
    for _ in 0..pick_usize(&mut rng, ranges.n_soft) {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let v = sign * pick(&mut rng, ranges.soft_contrast_hu);
        insert(&mut rng, [0.04, 0.22], v);
    }
    for _ in 0..pick_usize(&mut rng, ranges.n_bone) {
        let v = pick(&mut rng, ranges.bone_contrast_hu);
        insert(&mut rng, [0.03, 0.09], v);
    }
    EllipsePhantomSpec {
        ellipses,
        background_hu: 0.0,
        rows: ranges.size,
        cols: ranges.size,
        pixel_size_mm: ranges.pixel_size_mm,
        clamp_hu: Some(ranges.clamp_hu),
    }
}

pub fn random_phantom(ranges: &PhantomRanges, seed: u64) -> Result<Image> {
    random_phantom_spec(ranges, seed).render()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shepp_logan_max_is_skull() {
        let img = shepp_logan(128).unwrap();
        assert_eq!((img.rows(), img.cols()), (128, 128));
        let max = img.data().iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, 2.0 * SHEPP_LOGAN_HU_SCALE);
    }

    #[test]
    fn shepp_logan_background_exact() {
        let img = shepp_logan(64).unwrap();
        assert_eq!(img.get(0, 0), 0.0);
        assert_eq!(img.get(63, 31), 0.0);
    }

    #[test]
    fn shepp_logan_rejects_tiny() {
        assert!(shepp_logan(8).is_err());
    }

    #[test]
    fn shepp_logan_matches_membership_oracle() {
        // Independent evaluation: map pixel centre to unit coordinates and test
        // each table ellipse directly.
        let n = 128;
        let img = shepp_logan(n).unwrap();
        for &(r, c) in &[(64usize, 64usize), (10, 64), (64, 40), (100, 70), (20, 20)] {
            let x = (c as f64 - (n as f64 - 1.0) / 2.0) / (n as f64 / 2.0);
            let y = ((n as f64 - 1.0) / 2.0 - r as f64) / (n as f64 / 2.0);
            let mut v = 0.0;
            for e in SHEPP_LOGAN.iter() {
                let phi = e[5].to_radians();
                let (dx, dy) = (x - e[3], y - e[4]);
                let u = dx * phi.cos() + dy * phi.sin();
                let w = -dx * phi.sin() + dy * phi.cos();
                if (u / e[1]).powi(2) + (w / e[2]).powi(2) <= 1.0 {
                    v += e[0] * SHEPP_LOGAN_HU_SCALE;
                }
            }
            assert!((img.get(r, c) - v).abs() < 1e-9, "pixel ({r},{c})");
        }
    }

    #[test]
    fn random_phantom_is_seeded_and_bounded() {
        let ranges = PhantomRanges::desk(64);
        let a = random_phantom(&ranges, 7).unwrap();
        let b = random_phantom(&ranges, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..=2200.0).contains(&v)));
        let c = random_phantom(&ranges, 8).unwrap();
        let differ = a
            .data()
            .iter()
            .zip(c.data())
            .filter(|(x, y)| x != y)
            .count();
        assert!(differ as f64 >= 0.01 * a.len() as f64);
    }
}
