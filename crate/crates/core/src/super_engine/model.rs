use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::DenoiserWeights;
use crate::error::{Error, Result};
use crate::ultra::TransformBank;

use super::config::SuperConfig;

/// Mean metrics of one layer over the training and validation cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    /// One-based layer index.
    pub layer: usize,
    /// Last-epoch denoiser training loss (HU²).
    pub train_loss: f64,
    pub train_rmse: f64,
    pub val_rmse: Option<f64>,
    pub val_snr: Option<f64>,
    pub val_ssim: Option<f64>,
}

/// Per-layer denoisers plus the configuration they were trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredSuperModel {
    pub config: SuperConfig,
    pub layers: Vec<DenoiserWeights>,
    pub bank: Option<TransformBank>,
    pub metrics: Vec<LayerMetrics>,
    pub geometry_id: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    layers: usize,
    config_hash: String,
    model_hash: String,
    geometry_id: String,
    config: SuperConfig,
    layer_files: Vec<String>,
    bank_file: Option<String>,
    metrics: Vec<LayerMetrics>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn layer_file_name(l: usize) -> String {
    format!("layer_{l:03}.dn")
}

const BANK_FILE: &str = "transforms.tb";

impl LayeredSuperModel {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.layers {
            return Err(Error::Model(format!(
                "{} layer weights for a {}-layer configuration",
                self.layers.len(),
                self.config.layers
            )));
        }
        for w in &self.layers {
            w.validate()?;
        }
        if self.config.prior.is_ultra() && self.bank.is_none() {
            return Err(Error::Model("ULTRA model without a transform bank".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON configuration.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        hex(&Sha256::digest(json))
    }

    /// SHA-256 over the configuration, every layer's stored parameters and
    /// the transform bank.
    pub fn model_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        h.update(self.geometry_id.as_bytes());
        for w in &self.layers {
            h.update(w.to_container().encode());
        }
        if let Some(b) = &self.bank {
            h.update(b.to_container().encode());
        }
        hex(&h.finalize())
    }

    /// Reconstruction weights different from the training ones. The
    /// returned model hashes differently from the trained one.
    pub fn with_overridden_weights(&self, beta: Option<f64>, mu: Option<f64>) -> Self {
        let mut m = self.clone();
        if let Some(b) = beta {
            m.config.beta = b;
        }
        if let Some(u) = mu {
            m.config.mu = u;
        }
        m
    }

    /// Writes `manifest.json`, `layer_XXX.dn` and, for ULTRA, the bank.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut layer_files = Vec::new();
        for (l, w) in self.layers.iter().enumerate() {
            let name = layer_file_name(l);
            w.save(&dir.join(&name))?;
            layer_files.push(name);
        }
        let bank_file = match &self.bank {
            Some(b) => {
                b.save(&dir.join(BANK_FILE))?;
                Some(BANK_FILE.to_string())
            }
            None => None,
        };
        let manifest = Manifest {
            layers: self.layers.len(),
            config_hash: self.config_hash(),
            model_hash: self.model_hash(),
            geometry_id: self.geometry_id.clone(),
            config: self.config.clone(),
            layer_files,
            bank_file,
            metrics: self.metrics.clone(),
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Loads a model directory and checks the recorded hashes.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if m.layer_files.len() != m.layers {
            return Err(Error::format(
                &path,
                "layer count does not match the file list",
            ));
        }
        let layers = m
            .layer_files
            .iter()
            .map(|f| DenoiserWeights::load(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        let bank = match &m.bank_file {
            Some(f) => Some(TransformBank::load(&dir.join(f))?),
            None => None,
        };
        let model = LayeredSuperModel {
            config: m.config,
            layers,
            bank,
            metrics: m.metrics,
            geometry_id: m.geometry_id,
        };
        model.validate()?;
        if model.config_hash() != m.config_hash {
            return Err(Error::format(&path, "configuration hash mismatch"));
        }
        if model.model_hash() != m.model_hash {
            return Err(Error::format(
                &path,
                "model hash mismatch; files were modified",
            ));
        }
        Ok(model)
    }
}
