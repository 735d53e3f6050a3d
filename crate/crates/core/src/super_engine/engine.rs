use rayon::prelude::*;

use crate::denoiser::{apply, train, DenoiserWeights};
use crate::dose::{to_hu_mm, StatWeights};
use crate::error::{Error, Result};
use crate::metrics::{rmse, snr, ssim, SsimConfig};
use crate::regularizers::{kappa_map, tau_weights, EpParams, SpatialWeighting};
use crate::solver::{
    solve_ep, solve_quadratic_anchor, solve_ultra, PwlsProblem, SolveConfig, SolveTrace,
    UltraSolveSpec,
};
use crate::tomo::{FanBeamProjector, Image, Sinogram};
use crate::ultra::TransformBank;

use super::config::{MbirInit, PriorConfig, SuperConfig, SuperMode};
use super::model::{LayerMetrics, LayeredSuperModel};

/// One paired example: low-dose data with its FBP and the reference.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingCase {
    pub id: String,
    /// Post-log line integrals.
    pub y: Sinogram,
    pub weights: StatWeights,
    pub x0: Image,
    pub x_star: Image,
}

impl From<crate::datasets::SimulatedCase> for TrainingCase {
    fn from(c: crate::datasets::SimulatedCase) -> Self {
        TrainingCase {
            id: c.id,
            y: c.y,
            weights: c.weights,
            x0: c.x0,
            x_star: c.truth,
        }
    }
}

impl TrainingCase {
    pub fn validate(&self, proj: &FanBeamProjector) -> Result<()> {
        let g = proj.geometry();
        if (self.y.n_views(), self.y.n_dets()) != (g.n_views, g.n_dets)
            || (self.weights.n_views(), self.weights.n_dets()) != (g.n_views, g.n_dets)
        {
            return Err(Error::arg(format!(
                "case {}: sinogram or weights do not match the geometry",
                self.id
            )));
        }
        if (self.x0.rows(), self.x0.cols()) != (g.image_rows, g.image_cols) {
            return Err(Error::arg(format!(
                "case {}: FBP image does not match the geometry",
                self.id
            )));
        }
        self.x0.check_same_shape(&self.x_star)
    }
}

/// Per-case quantities reused by every layer: scaled data, the majorizer
/// norm and the spatial weights of the prior.
struct CaseContext {
    y_hu: Sinogram,
    weights: StatWeights,
    norm: f64,
    kappa: Option<Vec<f64>>,
    tau: Option<Vec<f64>>,
}

/// Everything a layer needs besides the denoiser.
struct LayerRunner<'a> {
    cfg: &'a SuperConfig,
    proj: &'a FanBeamProjector,
    bank: Option<&'a TransformBank>,
}

/// Output of one SUPER layer on one case.
struct LayerOutput {
    image: Image,
    trace: Option<SolveTrace>,
}

impl<'a> LayerRunner<'a> {
    fn new(
        cfg: &'a SuperConfig,
        proj: &'a FanBeamProjector,
        bank: Option<&'a TransformBank>,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.prior.is_ultra() && cfg.mode == SuperMode::Full && bank.is_none() {
            return Err(Error::arg("ULTRA prior requires a learned transform bank"));
        }
        Ok(LayerRunner { cfg, proj, bank })
    }

    fn context(&self, y: &Sinogram, weights: &StatWeights) -> Result<CaseContext> {
        let y_hu = to_hu_mm(y);
        let problem = PwlsProblem::fan_beam(self.proj, &y_hu, weights)?;
        let norm = if self.cfg.mode == SuperMode::SequentialOnly {
            1.0
        } else {
            problem.majorizer_norm(&self.cfg.solver)?
        };
        let weighting = match self.cfg.prior {
            PriorConfig::Ep { weighting, .. } | PriorConfig::Ultra { weighting } => Some(weighting),
            PriorConfig::None => None,
        };
        let uses_prior = self.cfg.mode == SuperMode::Full && self.cfg.beta > 0.0;
        let kappa = match weighting {
            Some(SpatialWeighting::Certainty) if uses_prior => {
                Some(kappa_map(self.proj, weights.data())?)
            }
            _ => None,
        };
        let tau = match (&kappa, self.bank, self.cfg.prior.is_ultra()) {
            (Some(k), Some(b), true) => {
                let g = self.proj.geometry();
                Some(tau_weights(k, g.image_rows, g.image_cols, &b.patch)?)
            }
            _ => None,
        };
        Ok(CaseContext {
            y_hu,
            weights: weights.clone(),
            norm,
            kappa,
            tau,
        })
    }

    /// Denoise, then (unless sequential) minimize the layer's MBIR cost
    /// anchored to the denoised image. Outputs are rounded to single
    /// precision so stored intermediates reproduce exactly.
    fn step(
        &self,
        ctx: &CaseContext,
        theta: &DenoiserWeights,
        prev: &Image,
    ) -> Result<LayerOutput> {
        let mut d = apply(theta, prev)?;
        d.quantize_f32();
        if self.cfg.mode == SuperMode::SequentialOnly {
            return Ok(LayerOutput {
                image: d,
                trace: None,
            });
        }
        let (beta, mu) = self.cfg.effective_weights();
        let x0 = match self.cfg.init {
            MbirInit::Denoised => &d,
            MbirInit::Previous => prev,
        };
        let mut solve = SolveConfig {
            beta,
            mu,
            majorizer_norm: Some(ctx.norm),
            ..self.cfg.solver.clone()
        };
        let problem = PwlsProblem::fan_beam(self.proj, &ctx.y_hu, &ctx.weights)?;
        let (mut x, trace) = match (self.cfg.mode, &self.cfg.prior) {
            (SuperMode::DataTermOnly, _) => {
                solve.outer_iters = self.cfg.data_term_iters;
                solve_quadratic_anchor(&problem, None, None, x0, &solve)?
            }
            (
                SuperMode::Full,
                PriorConfig::Ep {
                    delta,
                    neighborhood,
                    ..
                },
            ) if beta > 0.0 => {
                let mut ep = EpParams::new(*delta);
                ep.neighborhood = *neighborhood;
                ep.kappa = ctx.kappa.clone();
                solve_ep(&problem, &ep, Some(&d), x0, &solve)?
            }
            (SuperMode::Full, PriorConfig::Ultra { .. }) if beta > 0.0 => {
                let bank = self
                    .bank
                    .ok_or_else(|| Error::arg("ULTRA prior requires a transform bank"))?;
                let spec = UltraSolveSpec {
                    bank,
                    tau: ctx.tau.as_deref(),
                };
                let (x, t, _) = solve_ultra(&problem, spec, Some(&d), x0, &solve)?;
                (x, t)
            }
            _ => solve_quadratic_anchor(&problem, None, Some(&d), x0, &solve)?,
        };
        x.quantize_f32();
        Ok(LayerOutput {
            image: x,
            trace: Some(trace),
        })
    }
}

fn layer_error(layer: usize, case: &str, e: Error) -> Error {
    Error::Layer {
        layer,
        case: case.to_string(),
        source: Box::new(e),
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Result of [`super_train`]: the model plus the training-time layer
/// outputs of every training case (`train_outputs[n][l]`).
#[derive(Clone, Debug)]
pub struct SuperTraining {
    pub model: LayeredSuperModel,
    pub train_outputs: Vec<Vec<Image>>,
}

/// Greedy layer-wise training. Layer `l` trains a denoiser on the current
/// (input, reference) pairs, then every case is pushed through that layer;
/// cases are processed in parallel and results do not depend on the
/// worker count.
pub fn super_train(
    cases: &[TrainingCase],
    val: &[TrainingCase],
    cfg: &SuperConfig,
    proj: &FanBeamProjector,
    bank: Option<&TransformBank>,
) -> Result<SuperTraining> {
    if cases.is_empty() {
        return Err(Error::arg("no training cases"));
    }
    // The stored bank is single precision; train with exactly that one.
    let bank = bank.map(|b| {
        let mut b = b.clone();
        b.quantize_f32();
        b
    });
    let runner = LayerRunner::new(cfg, proj, bank.as_ref())?;
    for c in cases.iter().chain(val) {
        c.validate(proj)?;
    }
    let contexts = |set: &[TrainingCase]| -> Result<Vec<CaseContext>> {
        set.par_iter()
            .map(|c| {
                runner
                    .context(&c.y, &c.weights)
                    .map_err(|e| layer_error(0, &c.id, e))
            })
            .collect()
    };
    let train_ctx = contexts(cases)?;
    let val_ctx = contexts(val)?;
    let mut current: Vec<Image> = cases.iter().map(|c| c.x0.clone()).collect();
    let mut val_current: Vec<Image> = val.iter().map(|c| c.x0.clone()).collect();
    let mut outputs: Vec<Vec<Image>> = vec![Vec::with_capacity(cfg.layers); cases.len()];
    let mut layers: Vec<DenoiserWeights> = Vec::with_capacity(cfg.layers);
    let mut metrics = Vec::with_capacity(cfg.layers);
    let ssim_cfg = SsimConfig::default();

    for l in 0..cfg.layers {
        let pairs: Vec<(Image, Image)> = current
            .iter()
            .cloned()
            .zip(cases.iter().map(|c| c.x_star.clone()))
            .collect();
        let tc = crate::denoiser::TrainConfig {
            seed: cfg.training.seed.wrapping_add(l as u64),
            ..cfg.training.clone()
        };
        let init = if cfg.warm_start {
            layers.last().cloned()
        } else {
            None
        };
        let theta =
            train(&cfg.denoiser, init, &pairs, &tc).map_err(|e| layer_error(l + 1, "*", e))?;
        log::info!(
            "layer {}: denoiser trained, loss {:?}",
            l + 1,
            theta.meta.loss_curve.last()
        );

        let run = |set: &[TrainingCase], ctx: &[CaseContext], xs: &[Image]| -> Result<Vec<Image>> {
            (0..set.len())
                .into_par_iter()
                .map(|n| {
                    runner
                        .step(&ctx[n], &theta, &xs[n])
                        .map(|o| o.image)
                        .map_err(|e| layer_error(l + 1, &set[n].id, e))
                })
                .collect()
        };
        current = run(cases, &train_ctx, &current)?;
        val_current = run(val, &val_ctx, &val_current)?;
        for (o, x) in outputs.iter_mut().zip(&current) {
            o.push(x.clone());
        }

        let train_rmse = mean(
            current
                .iter()
                .zip(cases)
                .map(|(x, c)| rmse(x, &c.x_star).unwrap_or(f64::NAN)),
        );
        let (val_rmse, val_snr, val_ssim) = if val.is_empty() {
            (None, None, None)
        } else {
            let stat = |f: &dyn Fn(&Image, &Image) -> Result<f64>| -> Result<f64> {
                let v = val_current
                    .iter()
                    .zip(val)
                    .map(|(x, c)| f(x, &c.x_star))
                    .collect::<Result<Vec<_>>>()?;
                Ok(mean(v.into_iter()))
            };
            (
                Some(stat(&|a, b| rmse(a, b))?),
                Some(stat(&|a, b| snr(a, b))?),
                Some(stat(&|a, b| ssim(a, b, &ssim_cfg))?),
            )
        };
        log::info!(
            "layer {}: train RMSE {train_rmse:.3}, val RMSE {val_rmse:?}",
            l + 1
        );
        metrics.push(LayerMetrics {
            layer: l + 1,
            train_loss: theta.meta.loss_curve.last().copied().unwrap_or(f64::NAN),
            train_rmse,
            val_rmse,
            val_snr,
            val_ssim,
        });
        layers.push(theta);
    }

    let model = LayeredSuperModel {
        config: cfg.clone(),
        layers,
        bank: if cfg.prior.is_ultra() {
            bank.clone()
        } else {
            None
        },
        metrics,
        geometry_id: proj.geometry().id(),
    };
    Ok(SuperTraining {
        model,
        train_outputs: outputs,
    })
}

/// Final image, every layer's output and each layer's MBIR cost trace
/// (empty for sequential models).
#[derive(Clone, Debug)]
pub struct SuperReconstruction {
    pub image: Image,
    pub layers: Vec<Image>,
    pub traces: Vec<SolveTrace>,
}

fn check_model(model: &LayeredSuperModel, proj: &FanBeamProjector) -> Result<()> {
    model.validate()?;
    let id = proj.geometry().id();
    if model.geometry_id != id {
        return Err(Error::Model(format!(
            "model was trained for geometry {}, data uses {id}",
            model.geometry_id
        )));
    }
    Ok(())
}

/// Runs the model's layers on one measurement, exactly as in training.
pub fn super_reconstruct(
    y: &Sinogram,
    weights: &StatWeights,
    x0: &Image,
    model: &LayeredSuperModel,
    proj: &FanBeamProjector,
) -> Result<SuperReconstruction> {
    check_model(model, proj)?;
    let runner = LayerRunner::new(&model.config, proj, model.bank.as_ref())?;
    let ctx = runner.context(y, weights)?;
    let mut x = x0.clone();
    let mut layers = Vec::with_capacity(model.len());
    let mut traces = Vec::new();
    for theta in &model.layers {
        let out = runner.step(&ctx, theta, &x)?;
        x = out.image;
        layers.push(x.clone());
        traces.extend(out.trace);
    }
    Ok(SuperReconstruction {
        image: x,
        layers,
        traces,
    })
}

/// RMS change produced by one more layer with the last denoiser, applied
/// at `x`; zero at an exact fixed point.
pub fn evaluate_fixed_point_residual(
    y: &Sinogram,
    weights: &StatWeights,
    model: &LayeredSuperModel,
    proj: &FanBeamProjector,
    x: &Image,
) -> Result<f64> {
    check_model(model, proj)?;
    let runner = LayerRunner::new(&model.config, proj, model.bank.as_ref())?;
    let ctx = runner.context(y, weights)?;
    let theta = model.layers.last().expect("validated model has layers");
    let next = runner.step(&ctx, theta, x)?.image;
    rmse(&next, x)
}
