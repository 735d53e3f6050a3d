use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::io::Container;
use crate::tomo::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    /// 3×3 convolution, zero padding 1, with bias.
    Conv {
        out_channels: usize,
    },
    Relu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserSpec {
    pub layers: Vec<LayerSpec>,
    /// Output = input + network(input).
    pub residual_skip: bool,
}

impl DenoiserSpec {
    /// conv(1→16) → relu → conv(16→16) → relu → conv(16→1), residual.
    pub fn reference() -> Self {
        Self::plain(&[16, 16])
    }

    /// Convolutions with the given hidden widths separated by ReLUs, then a
    /// final single-channel convolution.
    pub fn plain(hidden: &[usize]) -> Self {
        let mut layers = Vec::new();
        for &c in hidden {
            layers.push(LayerSpec::Conv { out_channels: c });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Conv { out_channels: 1 });
        DenoiserSpec {
            layers,
            residual_skip: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.layers.last() {
            Some(LayerSpec::Conv { out_channels: 1 }) => {}
            _ => {
                return Err(Error::Model(
                    "last layer must be a single-channel convolution".into(),
                ))
            }
        }
        if self
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Conv { out_channels: 0 }))
        {
            return Err(Error::Model(
                "convolutions need at least one output channel".into(),
            ));
        }
        Ok(())
    }

    /// (in_channels, out_channels, parameter offset) for each convolution.
    pub fn conv_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut cin = 1;
        let mut off = 0;
        let mut out = Vec::new();
        for l in &self.layers {
            if let LayerSpec::Conv { out_channels } = *l {
                out.push((cin, out_channels, off));
                off += out_channels * cin * 9 + out_channels;
                cin = out_channels;
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.conv_shapes()
            .iter()
            .map(|(ci, co, _)| co * ci * 9 + co)
            .sum()
    }
}

/// Affine map to the network's working range: u = (x − offset) / scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: f64,
    pub scale: f64,
}

impl Normalization {
    /// Maps the HU window [lo, hi] onto [0, 1].
    pub fn window(lo: f64, hi: f64) -> Self {
        Normalization {
            offset: lo,
            scale: hi - lo,
        }
    }
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::window(0.0, 2000.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Mean squared error (HU²) per epoch.
    pub loss_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserWeights {
    pub spec: DenoiserSpec,
    pub params: Vec<f64>,
    pub norm: Normalization,
    pub meta: TrainingMeta,
}

/// Anything usable as the supervised module of a reconstruction layer.
pub trait Denoiser: Sync {
    fn denoise(&self, x: &Image) -> Result<Image>;
}

impl Denoiser for DenoiserWeights {
    fn denoise(&self, x: &Image) -> Result<Image> {
        super::net::apply(self, x)
    }
}

impl DenoiserWeights {
    pub fn zeros(spec: DenoiserSpec, norm: Normalization) -> Result<Self> {
        spec.validate()?;
        Ok(DenoiserWeights {
            params: vec![0.0; spec.param_count()],
            spec,
            norm,
            meta: TrainingMeta::default(),
        })
    }

    /// Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases; the
    /// final convolution is scaled by `final_gain` so training starts near
    /// the identity map.
    pub fn kaiming(
        spec: DenoiserSpec,
        norm: Normalization,
        seed: u64,
        final_gain: f64,
    ) -> Result<Self> {
        let mut w = Self::zeros(spec, norm)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = w.spec.conv_shapes();
        let last = shapes.len() - 1;
        for (i, &(cin, cout, off)) in shapes.iter().enumerate() {
            let bound = (6.0 / (cin * 9) as f64).sqrt() * if i == last { final_gain } else { 1.0 };
            for p in &mut w.params[off..off + cout * cin * 9] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        w.quantize_f32();
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.params.len() != self.spec.param_count() {
            return Err(Error::Model(format!(
                "{} parameters for a spec needing {}",
                self.params.len(),
                self.spec.param_count()
            )));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Model("non-finite parameters".into()));
        }
        if !(self.norm.scale > 0.0) || !self.norm.offset.is_finite() {
            return Err(Error::Model("invalid normalization".into()));
        }
        Ok(())
    }

    pub fn quantize_f32(&mut self) {
        self.params.iter_mut().for_each(|p| *p = *p as f32 as f64);
    }

    pub fn to_container(&self) -> Container {
        let Value::Object(h) = json!({
            "spec": self.spec,
            "normalization": self.norm,
            "training": self.meta,
        }) else {
            unreachable!()
        };
        Container::new(
            "denoiser",
            h,
            self.params.iter().map(|&p| p as f32).collect(),
        )
    }

    pub fn from_container(c: &Container) -> std::result::Result<Self, String> {
        if c.kind() != Some("denoiser") {
            return Err(format!("expected kind \"denoiser\", found {:?}", c.kind()));
        }
        let field = |k: &str| {
            c.header
                .get(k)
                .cloned()
                .ok_or_else(|| format!("header field {k:?} missing"))
        };
        let spec: DenoiserSpec =
            serde_json::from_value(field("spec")?).map_err(|e| e.to_string())?;
        let norm = serde_json::from_value(field("normalization")?).map_err(|e| e.to_string())?;
        let meta = serde_json::from_value(field("training")?).map_err(|e| e.to_string())?;
        let w = DenoiserWeights {
            spec,
            params: c.payload.iter().map(|&p| p as f64).collect(),
            norm,
            meta,
        };
        w.validate().map_err(|e| e.to_string())?;
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        Self::from_container(&c).map_err(|d| Error::format(path, d))
    }
}
