use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tomo::Image;

use super::net::pair_loss_and_gradient;
use super::weights::{DenoiserSpec, DenoiserWeights, Normalization, TrainingMeta};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// SGD with heavy-ball momentum.
    #[default]
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Train on random square crops of this side instead of whole images.
    #[serde(default)]
    pub crop: Option<usize>,
    /// HU window mapped to [0, 1] inside the network.
    #[serde(default = "default_window")]
    pub window_hu: [f64; 2],
    /// Scale of the last convolution's initial weights.
    #[serde(default = "default_final_gain")]
    pub final_gain: f64,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_batch() -> usize {
    4
}
fn default_window() -> [f64; 2] {
    [0.0, 2000.0]
}
fn default_final_gain() -> f64 {
    0.1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 1e-3,
            momentum: default_momentum(),
            batch: default_batch(),
            seed: 0,
            optimizer: Optimizer::Adam,
            crop: None,
            window_hu: default_window(),
            final_gain: default_final_gain(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::arg("epochs and batch must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg(
                "learning rate must be positive and momentum in [0, 1)",
            ));
        }
        if !(self.window_hu[1] > self.window_hu[0]) {
            return Err(Error::arg("HU window must be increasing"));
        }
        if self.crop == Some(0) {
            return Err(Error::arg("crop size must be positive"));
        }
        Ok(())
    }
}

/// Mini-batch training of Σ‖G(x) − t‖². Updates follow the gradient of the
/// per-pixel mean squared error in normalized units; the data order is
/// reshuffled every epoch and crops are drawn from the same seeded stream.
pub fn train(
    spec: &DenoiserSpec,
    init: Option<DenoiserWeights>,
    pairs: &[(Image, Image)],
    cfg: &TrainConfig,
) -> Result<DenoiserWeights> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::arg("no training pairs"));
    }
    for (x, t) in pairs {
        x.check_same_shape(t)?;
        if let Some(c) = cfg.crop {
            if c > x.rows() || c > x.cols() {
                return Err(Error::arg(format!(
                    "crop {c} larger than a {}x{} image",
                    x.rows(),
                    x.cols()
                )));
            }
        }
    }
    let mut w = match init {
        Some(w) => {
            if &w.spec != spec {
                return Err(Error::Model("initial weights do not match the spec".into()));
            }
            w.validate()?;
            w
        }
        None => DenoiserWeights::kaiming(
            spec.clone(),
            Normalization::window(cfg.window_hu[0], cfg.window_hu[1]),
            cfg.seed,
            cfg.final_gain,
        )?,
    };
    let np = w.params.len();
    let s2 = w.norm.scale * w.norm.scale;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut m1 = vec![0.0; np];
    let mut m2 = vec![0.0; np];
    let mut step = 0i32;
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_px = 0usize;
        for batch in order.chunks(cfg.batch) {
            let samples: Vec<(usize, usize, usize)> = batch
                .iter()
                .map(|&i| {
                    let (x, _) = &pairs[i];
                    match cfg.crop {
                        Some(c) => (
                            i,
                            rng.random_range(0..=x.rows() - c),
                            rng.random_range(0..=x.cols() - c),
                        ),
                        None => (i, 0, 0),
                    }
                })
                .collect();
            let results: Vec<Result<(f64, usize, Vec<f64>)>> = samples
                .par_iter()
                .map(|&(i, r0, c0)| {
                    let (x, t) = &pairs[i];
                    let (x, t) = match cfg.crop {
                        Some(c) => (x.crop(r0, c0, c, c)?, t.crop(r0, c0, c, c)?),
                        None => (x.clone(), t.clone()),
                    };
                    let mut g = vec![0.0; np];
                    let l = pair_loss_and_gradient(&w, &x, &t, &mut g);
                    Ok((l, x.len(), g))
                })
                .collect();
            let mut grad = vec![0.0; np];
            let mut px = 0usize;
            for r in results {
                let (l, n, g) = r?;
                epoch_loss += l;
                px += n;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            epoch_px += px;
            let norm = 1.0 / (px as f64 * s2);
            step += 1;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for i in 0..np {
                        m1[i] = cfg.momentum * m1[i] + grad[i] * norm;
                        w.params[i] -= cfg.learning_rate * m1[i];
                    }
                }
                Optimizer::Adam => {
                    let (b1, b2) = (0.9f64, 0.999f64);
                    let c1 = 1.0 - b1.powi(step);
                    let c2 = 1.0 - b2.powi(step);
                    for i in 0..np {
                        let g = grad[i] * norm;
                        m1[i] = b1 * m1[i] + (1.0 - b1) * g;
                        m2[i] = b2 * m2[i] + (1.0 - b2) * g * g;
                        w.params[i] -=
                            cfg.learning_rate * (m1[i] / c1) / ((m2[i] / c2).sqrt() + 1e-8);
                    }
                }
            }
        }
        let mse = epoch_loss / epoch_px as f64;
        if !mse.is_finite() || w.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training {
                epoch,
                detail: "loss or weights became non-finite".into(),
            });
        }
        log::debug!("epoch {epoch}: mse {mse:.4} HU^2");
        curve.push(mse);
    }
    w.quantize_f32();
    if w.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Training {
            epoch: cfg.epochs - 1,
            detail: "weights overflow single precision".into(),
        });
    }
    w.meta = TrainingMeta {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        loss_curve: curve,
    };
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::net::loss_and_gradient;

    fn pairs(n: usize, seed: u64) -> Vec<(Image, Image)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x = Image::new(
                    12,
                    12,
                    1.0,
                    (0..144).map(|_| rng.random_range(800.0..1200.0)).collect(),
                )
                .unwrap();
                (x.clone(), x)
            })
            .collect()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 15,
            learning_rate: 1e-3,
            seed: 3,
            final_gain: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn learns_identity_pairs() {
        let data = pairs(20, 1);
        let spec = DenoiserSpec::reference();
        let w = train(&spec, None, &data, &cfg()).unwrap();
        let curve = &w.meta.loss_curve;
        assert_eq!(curve.len(), 15);
        assert!(curve.last().unwrap() < &curve[0]);
        let init =
            DenoiserWeights::kaiming(spec, Normalization::window(0.0, 2000.0), 3, 1.0).unwrap();
        let (xs, ts): (Vec<_>, Vec<_>) = data.iter().cloned().unzip();
        let before = loss_and_gradient(&init, &xs, &ts).unwrap().0;
        let after = loss_and_gradient(&w, &xs, &ts).unwrap().0;
        assert!(after <= before);
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let data = pairs(6, 2);
        let spec = DenoiserSpec::plain(&[4]);
        let c = TrainConfig {
            epochs: 3,
            crop: Some(8),
            optimizer: Optimizer::Sgd,
            learning_rate: 0.05,
            ..cfg()
        };
        let a = train(&spec, None, &data, &c).unwrap();
        let b = train(&spec, None, &data, &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_epochs_rejected() {
        let c = TrainConfig { epochs: 0, ..cfg() };
        assert!(train(&DenoiserSpec::reference(), None, &pairs(2, 0), &c).is_err());
        assert!(train(&DenoiserSpec::reference(), None, &[], &cfg()).is_err());
    }

    #[test]
    fn divergence_reports_epoch() {
        let c = TrainConfig {
            epochs: 5,
            learning_rate: 1e12,
            optimizer: Optimizer::Sgd,
            ..cfg()
        };
        match train(&DenoiserSpec::reference(), None, &pairs(4, 0), &c) {
            Err(Error::Training { .. }) => {}
            other => panic!("expected a training error, got {other:?}"),
        }
    }
}
