use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use super::patches::PatchConfig;
use crate::error::{Error, Result};
use crate::io::Container;

/// Orthonormal DCT-II matrix of size n.
pub fn dct_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |k, i| {
        let a = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        a * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos()
    })
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// sign convention diag(R) > 0).
pub fn random_orthogonal<R: Rng>(m: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformBank {
    pub transforms: Vec<DMatrix<f64>>,
    pub lambda0: f64,
    pub eta: f64,
    pub patch: PatchConfig,
    pub training_seed: u64,
}

impl TransformBank {
    /// 2D DCT for the first transform; DCT composed with seeded random
    /// rotations for the rest.
    pub fn dct_init<R: Rng>(k: usize, patch: PatchConfig, rng: &mut R) -> Self {
        let d1 = dct_matrix(patch.patch_side);
        let dct = d1.kronecker(&d1);
        let m = patch.m();
        let transforms = (0..k)
            .map(|i| {
                if i == 0 {
                    dct.clone()
                } else {
                    &dct * random_orthogonal(m, rng)
                }
            })
            .collect();
        TransformBank {
            transforms,
            lambda0: 0.0,
            eta: 0.0,
            patch,
            training_seed: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.transforms.len()
    }

    pub fn m(&self) -> usize {
        self.patch.m()
    }

    pub fn validate(&self) -> Result<()> {
        if self.transforms.is_empty() {
            return Err(Error::Model("transform bank is empty".into()));
        }
        let m = self.m();
        for (k, t) in self.transforms.iter().enumerate() {
            if t.shape() != (m, m) {
                return Err(Error::Model(format!(
                    "transform {k} is {:?}, expected {m}x{m}",
                    t.shape()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Model(format!(
                    "transform {k} has non-finite entries"
                )));
            }
            let det = t.clone().lu().determinant();
            if det.abs() <= 1e-12 {
                return Err(Error::Model(format!(
                    "transform {k} is singular (det {det:e})"
                )));
            }
        }
        Ok(())
    }

    /// max_k λmax(Ω_kᵀΩ_k).
    pub fn max_gram_eigenvalue(&self) -> f64 {
        self.transforms
            .iter()
            .map(|t| {
                let s = t.clone().svd(false, false).singular_values;
                s.max().powi(2)
            })
            .fold(0.0, f64::max)
    }

    pub fn quantize_f32(&mut self) {
        for t in &mut self.transforms {
            t.apply(|v| *v = *v as f32 as f64);
        }
    }

    pub fn to_container(&self) -> Container {
        let Value::Object(h) = json!({
            "K": self.k(),
            "m": self.m(),
            "lambda0": self.lambda0,
            "eta": self.eta,
            "patch_side": self.patch.patch_side,
            "stride": self.patch.stride,
            "seed": self.training_seed,
        }) else {
            unreachable!()
        };
        let mut payload = Vec::with_capacity(self.k() * self.m() * self.m());
        for t in &self.transforms {
            for r in 0..t.nrows() {
                payload.extend(t.row(r).iter().map(|&v| v as f32));
            }
        }
        Container::new("transform_bank", h, payload)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        Self::from_container(&c).map_err(|d| Error::format(path, d))
    }

    pub fn from_container(c: &Container) -> std::result::Result<Self, String> {
        if c.kind() != Some("transform_bank") {
            return Err(format!(
                "expected kind \"transform_bank\", found {:?}",
                c.kind()
            ));
        }
        let k = c.get_usize("K")?;
        let m = c.get_usize("m")?;
        let side = c.get_usize("patch_side")?;
        if side * side != m {
            return Err(format!("patch_side {side} inconsistent with m {m}"));
        }
        if c.payload.len() != k * m * m {
            return Err(format!(
                "expected {} payload values, found {}",
                k * m * m,
                c.payload.len()
            ));
        }
        let transforms = c
            .payload
            .chunks_exact(m * m)
            .map(|chunk| DMatrix::from_row_iterator(m, m, chunk.iter().map(|&v| v as f64)))
            .collect();
        let seed = c
            .header
            .get("seed")
            .and_then(Value::as_u64)
            .ok_or("header field \"seed\" missing")?;
        Ok(TransformBank {
            transforms,
            lambda0: c.get_f64("lambda0")?,
            eta: c.get_f64("eta")?,
            patch: PatchConfig::new(side, c.get_usize("stride")?),
            training_seed: seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dct_is_orthonormal() {
        let d = dct_matrix(8);
        let e = &d * d.transpose() - DMatrix::identity(8, 8);
        assert!(e.amax() < 1e-14);
    }

    #[test]
    fn random_orthogonal_is_orthogonal_and_seeded() {
        let q = random_orthogonal(6, &mut ChaCha8Rng::seed_from_u64(3));
        assert!((q.transpose() * &q - DMatrix::identity(6, 6)).amax() < 1e-13);
        assert_eq!(q, random_orthogonal(6, &mut ChaCha8Rng::seed_from_u64(3)));
    }

    #[test]
    fn container_round_trip() {
        let mut bank =
            TransformBank::dct_init(3, PatchConfig::new(2, 1), &mut ChaCha8Rng::seed_from_u64(1));
        bank.lambda0 = 31.0;
        bank.eta = 20.0;
        bank.training_seed = 9;
        bank.quantize_f32();
        bank.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bank.sprg");
        bank.save(&p).unwrap();
        assert_eq!(TransformBank::load(&p).unwrap(), bank);
    }

    #[test]
    fn singular_transform_rejected() {
        let mut bank =
            TransformBank::dct_init(1, PatchConfig::new(2, 1), &mut ChaCha8Rng::seed_from_u64(1));
        bank.transforms[0] = DMatrix::zeros(4, 4);
        assert!(bank.validate().is_err());
    }
}
