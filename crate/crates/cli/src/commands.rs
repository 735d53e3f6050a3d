use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use superct::datasets::{build_dataset, import_dataset, DatasetManifest, SimulatedCase, Split};
use superct::dose::{to_hu_mm, DoseParams};
use superct::io::write_image;
use superct::metrics::{
    read_metrics_csv, rmse, snr, ssim, summarize, write_metrics_csv, MetricRow, SsimConfig,
};
use superct::regularizers::{kappa_map, tau_weights, EpParams};
use superct::solver::{
    pwls_ep_baseline, pwls_ultra_baseline, PwlsProblem, SolveConfig, SolveTrace, UltraSolveSpec,
};
use superct::super_engine::{super_reconstruct, super_train, LayeredSuperModel, TrainingCase};
use superct::tomo::{FanBeamGeometry, FanBeamProjector, Image};
use superct::ultra::{learn_ultra, TransformBank};

use crate::config::{ExperimentConfig, Method, SimulateConfig};
use crate::error::{CliError, CliResult};

/// Files written by a command, relative to the output directory.
#[derive(Debug, Default)]
pub struct Outputs {
    pub root: PathBuf,
    pub files: Vec<PathBuf>,
    /// Written but left out of the hash (wall-clock columns).
    pub unhashed: Vec<PathBuf>,
}

impl Outputs {
    fn new(root: &Path) -> Self {
        Outputs {
            root: root.to_path_buf(),
            ..Default::default()
        }
    }

    /// Records a file below `dir`, relative to the root when possible.
    fn add_in(&mut self, dir: &Path, rel: impl AsRef<Path>) -> PathBuf {
        let full = dir.join(rel);
        let key = full
            .strip_prefix(&self.root)
            .map(Path::to_path_buf)
            .unwrap_or_else(|_| full.clone());
        self.files.push(key);
        full
    }

    fn add(&mut self, rel: impl Into<PathBuf>) -> PathBuf {
        let rel = rel.into();
        self.files.push(rel.clone());
        self.root.join(rel)
    }

    /// SHA-256 over (relative path, contents) of every hashed file, in
    /// sorted path order.
    pub fn hash(&self) -> CliResult<String> {
        let mut files = self.files.clone();
        files.sort();
        let mut h = Sha256::new();
        for f in files {
            let p = self.root.join(&f);
            h.update(f.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(std::fs::read(&p).map_err(|e| CliError::io(&p, e))?);
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn create_dir(p: &Path) -> CliResult<()> {
    std::fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let mut w =
        csv::Writer::from_path(path).map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn load_geometry(cfg: &ExperimentConfig) -> CliResult<FanBeamGeometry> {
    match &cfg.geometry {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            Ok(FanBeamGeometry::from_json(&text)?)
        }
        None => Ok(FanBeamGeometry::desk()),
    }
}

fn dataset_files(out: &mut Outputs, dir: &Path, m: &DatasetManifest) {
    out.add_in(dir, superct::datasets::MANIFEST_FILE);
    out.add_in(dir, &m.geometry_file);
    for c in &m.cases {
        for f in [&c.reference, &c.sinogram, &c.weights, &c.fbp] {
            out.add_in(dir, f);
        }
    }
}

pub fn simulate(cfg: &ExperimentConfig) -> CliResult<Outputs> {
    let geom = load_geometry(cfg)?;
    if geom.image_rows != geom.image_cols {
        return Err(CliError::config("simulation needs a square image grid"));
    }
    let spec = cfg.simulate.clone().unwrap_or_default().dataset_spec(
        geom.image_rows,
        geom.pixel_size_mm,
        cfg.seed(),
    );
    let dir = cfg.dataset_dir();
    let m = build_dataset(&dir, &geom, &spec)?;
    let mut out = Outputs::new(&cfg.output_dir);
    dataset_files(&mut out, &dir, &m);
    Ok(out)
}

pub fn import(cfg: &ExperimentConfig) -> CliResult<Outputs> {
    let src = cfg
        .import_dir
        .as_ref()
        .ok_or_else(|| CliError::config("import needs \"import_dir\""))?;
    let geom = load_geometry(cfg)?;
    let sim: SimulateConfig = cfg.simulate.clone().unwrap_or_default();
    let dose = DoseParams::new(sim.i0, sim.sigma2, cfg.seed());
    let dir = cfg.dataset_dir();
    let m = import_dataset(src, &dir, &geom, &dose, sim.filter)?;
    let mut out = Outputs::new(&cfg.output_dir);
    dataset_files(&mut out, &dir, &m);
    Ok(out)
}

struct Dataset {
    dir: PathBuf,
    manifest: DatasetManifest,
    geom: FanBeamGeometry,
}

impl Dataset {
    fn open(cfg: &ExperimentConfig) -> CliResult<Self> {
        let dir = cfg.dataset_dir();
        let manifest = DatasetManifest::load(&dir)?;
        let geom = manifest.geometry(&dir)?;
        Ok(Dataset {
            dir,
            manifest,
            geom,
        })
    }

    fn split(&self, s: Split) -> CliResult<Vec<SimulatedCase>> {
        Ok(self.manifest.load_split(&self.dir, s, &self.geom)?)
    }
}

#[derive(Serialize)]
struct ObjectiveRow {
    iteration: usize,
    objective: f64,
}

pub fn learn_transforms(cfg: &ExperimentConfig) -> CliResult<Outputs> {
    let ds = Dataset::open(cfg)?;
    let images: Vec<Image> = ds
        .split(Split::Train)?
        .into_iter()
        .map(|c| c.truth)
        .collect();
    if images.is_empty() {
        return Err(CliError::config("dataset has no training cases"));
    }
    let lc = cfg.learn_config();
    let (bank, trace) = learn_ultra(&images, &lc)?;
    let mut out = Outputs::new(&cfg.output_dir);
    let bank_path = cfg.bank_path();
    bank.save(&out.add_in(
        bank_path.parent().unwrap_or(Path::new(".")),
        bank_path.file_name().expect("bank file name"),
    ))?;
    let rows: Vec<ObjectiveRow> = trace
        .objective
        .iter()
        .enumerate()
        .map(|(i, &o)| ObjectiveRow {
            iteration: i + 1,
            objective: o,
        })
        .collect();
    write_csv(&out.add("learn_objective.csv"), &rows)?;
    Ok(out)
}

fn load_bank(cfg: &ExperimentConfig) -> CliResult<TransformBank> {
    Ok(TransformBank::load(&cfg.bank_path())?)
}

pub fn train_super(cfg: &ExperimentConfig) -> CliResult<Outputs> {
    let method = cfg.method()?;
    let scfg = cfg.super_config(method)?;
    let ds = Dataset::open(cfg)?;
    let train: Vec<TrainingCase> = ds
        .split(Split::Train)?
        .into_iter()
        .map(Into::into)
        .collect();
    let val: Vec<TrainingCase> = ds.split(Split::Val)?.into_iter().map(Into::into).collect();
    if train.is_empty() {
        return Err(CliError::config("dataset has no training cases"));
    }
    let bank = if scfg.prior.is_ultra() {
        Some(load_bank(cfg)?)
    } else {
        None
    };
    let proj = FanBeamProjector::new(&ds.geom)?;
    let t = super_train(&train, &val, &scfg, &proj, bank.as_ref())?;

    let mut out = Outputs::new(&cfg.output_dir);
    let model_dir = cfg.model_dir();
    t.model.save(&model_dir)?;
    out.add_in(&model_dir, "manifest.json");
    for l in 0..t.model.len() {
        out.add_in(&model_dir, superct::super_engine::layer_file_name(l));
    }
    if t.model.bank.is_some() {
        out.add_in(&model_dir, "transforms.tb");
    }
    write_csv(&out.add("layer_metrics.csv"), &t.model.metrics)?;
    for (c, layers) in train.iter().zip(&t.train_outputs) {
        let last = layers.last().expect("at least one layer");
        write_image(&out.add(format!("train_final/{}.sprg", c.id)), last)?;
    }
    println!("model hash {}", t.model.model_hash());
    Ok(out)
}

struct CaseResult {
    final_image: Image,
    layers: Vec<Image>,
    traces: Vec<SolveTrace>,
}

fn reconstruct_case(
    cfg: &ExperimentConfig,
    method: Method,
    c: &SimulatedCase,
    proj: &FanBeamProjector,
    model: Option<&LayeredSuperModel>,
    bank: Option<&TransformBank>,
) -> CliResult<CaseResult> {
    let single = |x: Image| CaseResult {
        final_image: x,
        layers: Vec::new(),
        traces: Vec::new(),
    };
    if method == Method::Fbp {
        return Ok(single(c.x0.clone()));
    }
    if let Some(m) = model {
        let r = super_reconstruct(&c.y, &c.weights, &c.x0, m, proj)?;
        return Ok(CaseResult {
            final_image: r.image,
            layers: r.layers,
            traces: r.traces,
        });
    }
    let b = cfg.baseline_config()?;
    let y = to_hu_mm(&c.y);
    let problem = PwlsProblem::fan_beam(proj, &y, &c.weights)?;
    let kappa = kappa_map(proj, c.weights.data())?;
    let mut x = if method == Method::PwlsEp {
        let mut ep = EpParams::new(b.ep_delta).with_kappa(kappa);
        ep.neighborhood = b.ep_neighborhood;
        let sc = SolveConfig {
            beta: b.ep_beta,
            ..SolveConfig::with_iters(b.ep_iters, 1)
        };
        pwls_ep_baseline(&problem, &ep, &c.x0, &sc)?
    } else {
        let bank = bank.expect("bank loaded for ULTRA");
        let tau = tau_weights(&kappa, problem.rows, problem.cols, &bank.patch)?;
        let sc = SolveConfig {
            beta: b.ultra_beta,
            gamma: b.ultra_gamma,
            ..SolveConfig::with_iters(b.ultra_alternations, b.ultra_inner_iters)
        };
        let spec = UltraSolveSpec {
            bank,
            tau: Some(&tau),
        };
        pwls_ultra_baseline(&problem, spec, &c.x0, &sc)?
    };
    x.quantize_f32();
    Ok(single(x))
}

fn metric_row(
    id: &str,
    method: Method,
    layer: Option<usize>,
    x: &Image,
    truth: &Image,
    s: &SsimConfig,
) -> CliResult<MetricRow> {
    Ok(MetricRow {
        case_id: id.to_string(),
        method: method.name().to_string(),
        layer,
        rmse: rmse(x, truth)?,
        snr: snr(x, truth)?,
        ssim: ssim(x, truth, s)?,
    })
}

pub fn reconstruct(cfg: &ExperimentConfig, dump_layers: bool) -> CliResult<Outputs> {
    let method = cfg.method()?;
    let ds = Dataset::open(cfg)?;
    let cases = ds.split(cfg.split.unwrap_or(Split::Test))?;
    let proj = FanBeamProjector::new(&ds.geom)?;
    let model = if method.is_layered() {
        let m = LayeredSuperModel::load(&cfg.model_dir())?;
        let expect = cfg.super_config(method)?.mode;
        if m.config.mode != expect {
            return Err(CliError::config(format!(
                "model was trained as {:?}, method {} needs {expect:?}",
                m.config.mode,
                method.name()
            )));
        }
        Some(m)
    } else {
        None
    };
    let bank = if method == Method::PwlsUltra {
        Some(load_bank(cfg)?)
    } else {
        None
    };
    let results: Vec<CaseResult> = cases
        .par_iter()
        .map(|c| reconstruct_case(cfg, method, c, &proj, model.as_ref(), bank.as_ref()))
        .collect::<CliResult<_>>()?;

    let s = cfg.ssim.clone().unwrap_or_default();
    let mut out = Outputs::new(&cfg.output_dir);
    let mut rows = Vec::new();
    for (c, r) in cases.iter().zip(&results) {
        write_image(
            &out.add(format!("recon/{}_{}.sprg", c.id, method.name())),
            &r.final_image,
        )?;
        if r.layers.is_empty() {
            rows.push(metric_row(
                &c.id,
                method,
                None,
                &r.final_image,
                &c.truth,
                &s,
            )?);
        }
        for (l, x) in r.layers.iter().enumerate() {
            rows.push(metric_row(&c.id, method, Some(l + 1), x, &c.truth, &s)?);
            if dump_layers {
                write_image(
                    &out.add(format!(
                        "layers/{}_{}_layer{:03}.sprg",
                        c.id,
                        method.name(),
                        l + 1
                    )),
                    x,
                )?;
            }
        }
        if dump_layers {
            for (l, t) in r.traces.iter().enumerate() {
                let rel = PathBuf::from(format!(
                    "traces/{}_{}_layer{:03}.csv",
                    c.id,
                    method.name(),
                    l + 1
                ));
                let p = cfg.output_dir.join(&rel);
                if let Some(parent) = p.parent() {
                    create_dir(parent)?;
                }
                t.save_csv(&p)?;
                out.unhashed.push(rel);
            }
        }
    }
    let mpath = out.add(format!("metrics_{}.csv", method.name()));
    write_metrics_csv(&mpath, &rows)?;
    Ok(out)
}

/// Summary JSON over all rows of the given metric CSVs.
pub fn report(csvs: &[PathBuf]) -> CliResult<String> {
    if csvs.is_empty() {
        return Err(CliError::config("report needs at least one metrics CSV"));
    }
    let mut rows = Vec::new();
    for p in csvs {
        rows.extend(read_metrics_csv(p)?);
    }
    let summary = summarize(&rows)?;
    Ok(serde_json::to_string_pretty(&summary).expect("summary serializes"))
}

pub fn report_to(
    cfg: Option<&ExperimentConfig>,
    csvs: &[PathBuf],
    output: Option<&Path>,
) -> CliResult<Outputs> {
    let json = report(csvs)?;
    match (output, cfg) {
        (Some(p), _) => {
            write_text(p, &json)?;
            let root = p.parent().unwrap_or(Path::new(".")).to_path_buf();
            let mut out = Outputs::new(&root);
            out.add(p.file_name().expect("output file name"));
            Ok(out)
        }
        (None, Some(cfg)) => {
            let mut out = Outputs::new(&cfg.output_dir);
            write_text(&out.add("summary.json"), &json)?;
            Ok(out)
        }
        (None, None) => {
            println!("{json}");
            Ok(Outputs::default())
        }
    }
}
