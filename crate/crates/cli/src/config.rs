use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use superct::datasets::{DatasetSpec, PhantomRanges, Split};
use superct::dose::DoseParams;
use superct::metrics::SsimConfig;
use superct::regularizers::Neighborhood;
use superct::super_engine::{PriorConfig, SuperConfig, SuperMode};
use superct::tomo::FilterKind;
use superct::ultra::{LearnConfig, PatchConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Fbp,
    PwlsEp,
    PwlsUltra,
    SuperEp,
    SuperUltra,
    Sequential,
    DataTermOnly,
    SupervisedOnly,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fbp => "fbp",
            Method::PwlsEp => "pwls-ep",
            Method::PwlsUltra => "pwls-ultra",
            Method::SuperEp => "super-ep",
            Method::SuperUltra => "super-ultra",
            Method::Sequential => "sequential",
            Method::DataTermOnly => "data-term-only",
            Method::SupervisedOnly => "supervised-only",
        }
    }

    /// Methods that run a trained layered model.
    pub fn is_layered(self) -> bool {
        !matches!(self, Method::Fbp | Method::PwlsEp | Method::PwlsUltra)
    }

    pub fn uses_bank(self) -> bool {
        matches!(self, Method::PwlsUltra | Method::SuperUltra)
    }

    fn mode(self) -> SuperMode {
        match self {
            Method::Sequential => SuperMode::SequentialOnly,
            Method::DataTermOnly => SuperMode::DataTermOnly,
            Method::SupervisedOnly => SuperMode::SupervisedRegOnly,
            _ => SuperMode::Full,
        }
    }
}

/// Dataset generation settings for `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_train")]
    pub n_train: usize,
    #[serde(default = "default_val")]
    pub n_val: usize,
    #[serde(default = "default_test")]
    pub n_test: usize,
    /// Incident photons per ray.
    #[serde(default = "default_i0")]
    pub i0: f64,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    #[serde(default)]
    pub filter: FilterKind,
    /// Randomized phantom ranges; desk ranges for the geometry when absent.
    #[serde(default)]
    pub phantom: Option<PhantomRanges>,
}

fn default_train() -> usize {
    40
}
fn default_val() -> usize {
    5
}
fn default_test() -> usize {
    10
}
fn default_i0() -> f64 {
    1e4
}
fn default_sigma2() -> f64 {
    25.0
}

impl Default for SimulateConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

impl SimulateConfig {
    pub fn dataset_spec(&self, size: usize, pixel_size_mm: f64, seed: u64) -> DatasetSpec {
        let phantom = self.phantom.clone().unwrap_or_else(|| PhantomRanges {
            pixel_size_mm,
            ..PhantomRanges::desk(size)
        });
        DatasetSpec {
            n_train: self.n_train,
            n_val: self.n_val,
            n_test: self.n_test,
            phantom,
            dose: DoseParams::new(self.i0, self.sigma2, seed),
            filter: self.filter,
            seed,
        }
    }
}

/// Standalone PWLS settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub ep_beta: f64,
    #[serde(default = "default_delta")]
    pub ep_delta: f64,
    #[serde(default)]
    pub ep_neighborhood: Neighborhood,
    pub ep_iters: usize,
    pub ultra_beta: f64,
    pub ultra_gamma: f64,
    pub ultra_alternations: usize,
    #[serde(default = "default_inner")]
    pub ultra_inner_iters: usize,
}

fn default_delta() -> f64 {
    20.0
}
fn default_inner() -> usize {
    5
}

impl BaselineConfig {
    /// β = 2¹⁶ / 10⁴, 100 EP iterations, 1000 ULTRA alternations.
    pub fn paper() -> Self {
        BaselineConfig {
            ep_beta: 2f64.powi(16),
            ep_delta: 20.0,
            ep_neighborhood: Neighborhood::Eight,
            ep_iters: 100,
            ultra_beta: 1e4,
            ultra_gamma: 25.0,
            ultra_alternations: 1000,
            ultra_inner_iters: 5,
        }
    }

    /// The desk prior weights and 100 ULTRA alternations.
    pub fn desk() -> Self {
        let p = Self::paper();
        BaselineConfig {
            ep_beta: superct::super_engine::DESK_EP_BETA,
            ultra_beta: superct::super_engine::DESK_ULTRA_BETA,
            ultra_alternations: 100,
            ..p
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// All outputs are written below this directory.
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Geometry JSON; the desk geometry when absent.
    #[serde(default)]
    pub geometry: Option<PathBuf>,
    /// Dataset directory; `<output_dir>/dataset` when absent.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    /// Directory of raw images for `import`.
    #[serde(default)]
    pub import_dir: Option<PathBuf>,
    #[serde(default)]
    pub method: Option<Method>,
    /// One of "paper-ep", "paper-ultra", "desk".
    #[serde(default)]
    pub preset: Option<String>,
    /// Full layered-model configuration; replaces the preset.
    #[serde(default, rename = "super")]
    pub super_config: Option<SuperConfig>,
    #[serde(default)]
    pub learn: Option<LearnConfig>,
    #[serde(default)]
    pub baseline: Option<BaselineConfig>,
    /// Transform bank file; `<output_dir>/transforms.tb` when absent.
    #[serde(default)]
    pub bank: Option<PathBuf>,
    /// Model directory; `<output_dir>/model` when absent.
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Split reconstructed by `reconstruct`.
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub ssim: Option<SsimConfig>,
    /// Metric CSVs summarized by `report`.
    #[serde(default)]
    pub metrics: Vec<PathBuf>,
}

impl ExperimentConfig {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            &mut self.geometry,
            &mut self.dataset,
            &mut self.import_dir,
            &mut self.bank,
            &mut self.model,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.metrics.iter_mut().for_each(fix);
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset
            .clone()
            .unwrap_or_else(|| self.output_dir.join("dataset"))
    }

    pub fn bank_path(&self) -> PathBuf {
        self.bank
            .clone()
            .unwrap_or_else(|| self.output_dir.join("transforms.tb"))
    }

    pub fn model_dir(&self) -> PathBuf {
        self.model
            .clone()
            .unwrap_or_else(|| self.output_dir.join("model"))
    }

    pub fn method(&self) -> CliResult<Method> {
        self.method
            .ok_or_else(|| CliError::config("config needs a \"method\""))
    }

    fn preset_name(&self) -> &str {
        self.preset.as_deref().unwrap_or("desk")
    }

    /// Layered-model configuration for `method`: the explicit `super`
    /// section if given, else the preset, with mode and seeds applied.
    pub fn super_config(&self, method: Method) -> CliResult<SuperConfig> {
        if !method.is_layered() {
            return Err(CliError::config(format!(
                "method {} does not train a layered model",
                method.name()
            )));
        }
        let mut cfg = match &self.super_config {
            Some(c) => c.clone(),
            None => SuperConfig::preset(self.preset_name(), method == Method::SuperUltra)?,
        };
        match (method, &cfg.prior) {
            (Method::SuperUltra, p) if !p.is_ultra() => {
                return Err(CliError::config("method super-ultra needs an ULTRA prior"));
            }
            (Method::SuperEp, p) if !matches!(p, PriorConfig::Ep { .. }) => {
                return Err(CliError::config("method super-ep needs an EP prior"));
            }
            _ => {}
        }
        cfg.mode = method.mode();
        if let Some(s) = self.seed {
            cfg.training.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn learn_config(&self) -> LearnConfig {
        let mut c = self.learn.clone().unwrap_or_else(desk_learn);
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c
    }

    pub fn baseline_config(&self) -> CliResult<BaselineConfig> {
        if let Some(b) = &self.baseline {
            return Ok(b.clone());
        }
        match self.preset_name() {
            "desk" => Ok(BaselineConfig::desk()),
            "paper-ep" | "paper-ultra" => Ok(BaselineConfig::paper()),
            other => Err(CliError::config(format!("unknown preset {other:?}"))),
        }
    }
}

/// K = 5 transforms of 8×8 patches at stride 2, 20 alternations.
pub fn desk_learn() -> LearnConfig {
    LearnConfig {
        k: 5,
        patch: PatchConfig::new(8, 2),
        iters: 20,
        ..LearnConfig::default()
    }
}
