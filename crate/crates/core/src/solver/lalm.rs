use std::time::Instant;

use crate::dose::StatWeights;
use crate::error::{Error, Result};
use crate::regularizers::{ep_majorizer, EpParams, UltraRegState};
use crate::tomo::{power_iteration, FanBeamProjector, Image, LinearOperator, Sinogram};
use crate::ultra::TransformBank;

use super::config::{SolveConfig, SolveTrace};

/// Data, weights and operator of one reconstruction problem. The image is
/// `rows × cols` and `y` lives in the operator's range.
#[derive(Clone, Copy)]
pub struct PwlsProblem<'a> {
    pub op: &'a dyn LinearOperator,
    pub y: &'a [f64],
    pub weights: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub pixel_size_mm: f64,
}

impl<'a> PwlsProblem<'a> {
    pub fn new(
        op: &'a dyn LinearOperator,
        y: &'a [f64],
        weights: &'a [f64],
        rows: usize,
        cols: usize,
        pixel_size_mm: f64,
    ) -> Result<Self> {
        if op.domain_len() != rows * cols {
            return Err(Error::arg(format!(
                "operator domain {} differs from {rows}x{cols} image",
                op.domain_len()
            )));
        }
        if y.len() != op.range_len() || weights.len() != op.range_len() {
            return Err(Error::arg(format!(
                "data ({}) and weights ({}) must match the operator range {}",
                y.len(),
                weights.len(),
                op.range_len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Data("weights must be finite and nonnegative".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite measurements".into()));
        }
        Ok(PwlsProblem {
            op,
            y,
            weights,
            rows,
            cols,
            pixel_size_mm,
        })
    }

    /// Problem over a fan-beam projector; `y` must already be in the
    /// image-unit scale of the projector (see [`crate::dose::to_hu_mm`]).
    pub fn fan_beam(
        proj: &'a FanBeamProjector,
        y: &'a Sinogram,
        w: &'a StatWeights,
    ) -> Result<Self> {
        let g = proj.geometry();
        if (y.n_views(), y.n_dets()) != (g.n_views, g.n_dets)
            || (w.n_views(), w.n_dets()) != (g.n_views, g.n_dets)
        {
            return Err(Error::arg("sinogram or weights do not match the geometry"));
        }
        Self::new(
            proj,
            y.data(),
            w.data(),
            g.image_rows,
            g.image_cols,
            g.pixel_size_mm,
        )
    }

    pub fn image(&self, data: Vec<f64>) -> Image {
        Image::new(self.rows, self.cols, self.pixel_size_mm, data).expect("finite solver iterate")
    }

    fn check_image(&self, x: &Image, what: &str) -> Result<()> {
        if (x.rows(), x.cols()) != (self.rows, self.cols) {
            return Err(Error::arg(format!(
                "{what} is {}x{}, problem is {}x{}",
                x.rows(),
                x.cols(),
                self.rows,
                self.cols
            )));
        }
        Ok(())
    }

    /// ‖y − Ax‖²_W and its gradient 2AᵀW(Ax − y).
    pub fn data_eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut r = self.op.apply_vec(x);
        let mut cost = 0.0;
        for ((ri, yi), wi) in r.iter_mut().zip(self.y).zip(self.weights) {
            let d = *ri - yi;
            cost += wi * d * d;
            *ri = 2.0 * wi * d;
        }
        (cost, self.op.apply_adjoint_vec(&r))
    }

    pub fn data_cost(&self, x: &[f64]) -> f64 {
        self.data_eval(x).0
    }

    /// λmax(AᵀWA) bound used by the majorizer.
    pub fn majorizer_norm(&self, cfg: &SolveConfig) -> Result<f64> {
        let n = match cfg.majorizer_norm {
            Some(n) => n,
            None => cfg.norm_margin * power_iteration(self.op, self.weights, cfg.norm_iters, 0)?,
        };
        Ok(if n > 0.0 { n } else { 1.0 })
    }
}

enum Prior<'a> {
    None,
    Ep(&'a EpParams),
    Ultra(&'a UltraRegState, Vec<f64>),
}

/// βR(x) + μ‖x − a‖² with a separable curvature bound.
struct Penalty<'a> {
    prior: Prior<'a>,
    beta: f64,
    mu: f64,
    anchor: Option<&'a [f64]>,
    rows: usize,
    cols: usize,
    px: f64,
}

struct Eval {
    value: f64,
    grad: Vec<f64>,
    diag: Vec<f64>,
}

impl Penalty<'_> {
    fn eval(&self, x: &[f64]) -> Result<Eval> {
        let n = x.len();
        let (mut value, mut grad, mut diag) = match &self.prior {
            Prior::Ep(p) if self.beta > 0.0 => {
                let img = Image::new(self.rows, self.cols, self.px, x.to_vec())?;
                let (v, mut g, mut d) = ep_majorizer(&img, p)?;
                g.iter_mut().for_each(|v| *v *= self.beta);
                d.iter_mut().for_each(|v| *v *= self.beta);
                (self.beta * v, g, d)
            }
            Prior::Ultra(st, d) if self.beta > 0.0 => {
                let (v, mut g) = st.value_and_gradient(x)?;
                g.iter_mut().for_each(|v| *v *= self.beta);
                (self.beta * v, g, d.iter().map(|v| v * self.beta).collect())
            }
            _ => (0.0, vec![0.0; n], vec![0.0; n]),
        };
        if let (Some(a), true) = (self.anchor, self.mu > 0.0) {
            for j in 0..n {
                let d = x[j] - a[j];
                value += self.mu * d * d;
                grad[j] += 2.0 * self.mu * d;
                diag[j] += 2.0 * self.mu;
            }
        }
        Ok(Eval { value, grad, diag })
    }
}

/// Relaxation schedule: ρ₀ = 1, then π/(α(k+1))·sqrt(1 − (π/(2α(k+1)))²).
fn rho(k: usize, alpha: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let a = std::f64::consts::PI / (alpha * (k + 1) as f64);
    a * (1.0 - (a / 2.0).powi(2)).max(0.0).sqrt()
}

fn divergence(iteration: usize, detail: impl Into<String>) -> Error {
    Error::Divergence {
        iteration,
        detail: detail.into(),
    }
}

const MONOTONE_SLACK: f64 = 1e-9;

struct Run<'p, 'a> {
    problem: &'p PwlsProblem<'a>,
    penalty: &'p Penalty<'p>,
    dl: f64,
    alpha: f64,
}

impl Run<'_, '_> {
    /// `iters` relaxed-LALM steps from `x`; returns the final cost and
    /// records every step in `trace.inner_costs`. The momentum only involves
    /// the data term, so callers that change the prior between calls may
    /// carry it over; `None` starts fresh.
    fn iterate(
        &self,
        x: &mut Vec<f64>,
        iters: usize,
        tolerance: f64,
        trace: &mut SolveTrace,
        outer: Option<Instant>,
        momentum: &mut Option<Momentum>,
    ) -> Result<f64> {
        let n = x.len();
        let dl = self.dl;
        let (dcost, mut zeta) = self.problem.data_eval(x);
        let mut pe = self.penalty.eval(x)?;
        let mut cost = dcost + pe.value;
        if !cost.is_finite() {
            return Err(divergence(0, "non-finite initial cost"));
        }
        let Momentum {
            mut g,
            mut h,
            mut k,
        } = momentum.take().unwrap_or_else(|| Momentum {
            g: zeta.clone(),
            h: x.iter().zip(&zeta).map(|(xi, z)| dl * xi - z).collect(),
            k: 0,
        });
        for it in 0..iters {
            let r = rho(k, self.alpha);
            let mut xn: Vec<f64> = (0..n)
                .map(|j| {
                    let s = r * (dl * x[j] - h[j]) + (1.0 - r) * g[j];
                    x[j] - (s + pe.grad[j]) / (r * dl + pe.diag[j])
                })
                .collect();
            let (mut dn, mut zn) = self.problem.data_eval(&xn);
            let mut pn = self.penalty.eval(&xn)?;
            let mut cn = dn + pn.value;
            if !(cn <= cost) {
                // Fall back to a plain majorize-minimize step and restart.
                xn = (0..n)
                    .map(|j| x[j] - (zeta[j] + pe.grad[j]) / (dl + pe.diag[j]))
                    .collect();
                (dn, zn) = self.problem.data_eval(&xn);
                pn = self.penalty.eval(&xn)?;
                cn = dn + pn.value;
                if !cn.is_finite() {
                    return Err(divergence(it + 1, "non-finite cost"));
                }
                if cn > cost + MONOTONE_SLACK * cost.abs() {
                    return Err(divergence(
                        it + 1,
                        format!("cost rose from {cost:e} to {cn:e}; majorizer constant too small"),
                    ));
                }
                g.clone_from(&zn);
                h = xn.iter().zip(&zn).map(|(xi, z)| dl * xi - z).collect();
                k = 0;
                trace.restarts += 1;
            } else {
                for j in 0..n {
                    g[j] = r / (r + 1.0) * (self.alpha * zn[j] + (1.0 - self.alpha) * g[j])
                        + g[j] / (r + 1.0);
                    h[j] = self.alpha * (dl * xn[j] - zn[j]) + (1.0 - self.alpha) * h[j];
                }
                k += 1;
            }
            let prev = cost;
            *x = xn;
            zeta = zn;
            pe = pn;
            cost = cn;
            trace.inner_costs.push(cost);
            if let Some(t0) = outer {
                trace.costs.push(cost);
                trace.seconds.push(t0.elapsed().as_secs_f64());
            }
            if tolerance > 0.0 && (prev - cost).abs() <= tolerance * cost.abs() {
                break;
            }
        }
        *momentum = Some(Momentum { g, h, k });
        Ok(cost)
    }
}

/// Relaxed-LALM state carried between calls of [`Run::iterate`].
struct Momentum {
    g: Vec<f64>,
    h: Vec<f64>,
    k: usize,
}

fn anchor_slice<'a>(p: &PwlsProblem, anchor: Option<&'a Image>) -> Result<Option<&'a [f64]>> {
    match anchor {
        Some(a) => {
            p.check_image(a, "anchor")?;
            Ok(Some(a.data()))
        }
        None => Ok(None),
    }
}

/// Minimizes ‖y − Ax‖²_W + β·(fixed-code ULTRA quadratic) + μ‖x − a‖²
/// with `cfg.outer_iters` iterations.
pub fn solve_quadratic_anchor(
    problem: &PwlsProblem,
    quad: Option<&UltraRegState>,
    anchor: Option<&Image>,
    x0: &Image,
    cfg: &SolveConfig,
) -> Result<(Image, SolveTrace)> {
    cfg.validate(false)?;
    problem.check_image(x0, "initial image")?;
    if let Some(st) = quad {
        if st.shape() != (problem.rows, problem.cols) {
            return Err(Error::arg("ULTRA state does not match the image size"));
        }
    }
    let prior = match quad {
        Some(st) => Prior::Ultra(st, st.majorizer_diag()),
        None => Prior::None,
    };
    run_single(problem, prior, anchor, x0, cfg)
}

fn run_single(
    problem: &PwlsProblem,
    prior: Prior,
    anchor: Option<&Image>,
    x0: &Image,
    cfg: &SolveConfig,
) -> Result<(Image, SolveTrace)> {
    let penalty = Penalty {
        prior,
        beta: cfg.beta,
        mu: cfg.mu,
        anchor: anchor_slice(problem, anchor)?,
        rows: problem.rows,
        cols: problem.cols,
        px: problem.pixel_size_mm,
    };
    let norm = problem.majorizer_norm(cfg)?;
    let run = Run {
        problem,
        penalty: &penalty,
        dl: 2.0 * norm,
        alpha: cfg.relaxation,
    };
    let mut trace = SolveTrace {
        majorizer_norm: norm,
        ..Default::default()
    };
    let mut x = x0.data().to_vec();
    trace.initial_cost = problem.data_cost(&x) + penalty.eval(&x)?.value;
    let t0 = Instant::now();
    run.iterate(
        &mut x,
        cfg.outer_iters,
        cfg.tolerance,
        &mut trace,
        Some(t0),
        &mut None,
    )?;
    Ok((problem.image(x), trace))
}

/// PWLS with the edge-preserving regularizer and optional proximal anchor.
pub fn solve_ep(
    problem: &PwlsProblem,
    ep: &EpParams,
    anchor: Option<&Image>,
    x0: &Image,
    cfg: &SolveConfig,
) -> Result<(Image, SolveTrace)> {
    cfg.validate(false)?;
    problem.check_image(x0, "initial image")?;
    run_single(problem, Prior::Ep(ep), anchor, x0, cfg)
}

/// Bank and patch weights for [`solve_ultra`].
#[derive(Clone, Copy)]
pub struct UltraSolveSpec<'a> {
    pub bank: &'a TransformBank,
    pub tau: Option<&'a [f64]>,
}

/// Alternates `inner_iters` image steps on the fixed-code quadratic with an
/// exact code/cluster refresh, `outer_iters` times. Codes start from `x0`.
pub fn solve_ultra(
    problem: &PwlsProblem,
    spec: UltraSolveSpec,
    anchor: Option<&Image>,
    x0: &Image,
    cfg: &SolveConfig,
) -> Result<(Image, SolveTrace, UltraRegState)> {
    cfg.validate(true)?;
    problem.check_image(x0, "initial image")?;
    let mut state = UltraRegState::new(
        spec.bank.clone(),
        cfg.gamma,
        spec.tau.map(<[f64]>::to_vec),
        x0,
    )?;
    let diag = state.majorizer_diag();
    let anchor = anchor_slice(problem, anchor)?;
    let norm = problem.majorizer_norm(cfg)?;
    let mut trace = SolveTrace {
        majorizer_norm: norm,
        ..Default::default()
    };
    let mut x = x0.data().to_vec();
    let t0 = Instant::now();
    let mut prev = f64::INFINITY;
    let mut momentum = None;
    for a in 0..cfg.outer_iters {
        let penalty = Penalty {
            prior: Prior::Ultra(&state, diag.clone()),
            beta: cfg.beta,
            mu: cfg.mu,
            anchor,
            rows: problem.rows,
            cols: problem.cols,
            px: problem.pixel_size_mm,
        };
        if a == 0 {
            trace.initial_cost = problem.data_cost(&x) + penalty.eval(&x)?.value;
            prev = trace.initial_cost;
        }
        let run = Run {
            problem,
            penalty: &penalty,
            dl: 2.0 * norm,
            alpha: cfg.relaxation,
        };
        run.iterate(
            &mut x,
            cfg.inner_iters,
            0.0,
            &mut trace,
            None,
            &mut momentum,
        )?;
        state.refresh(&x)?;
        let joint = problem.data_cost(&x) + penalty_value(&state, cfg, anchor, &x)?;
        trace.costs.push(joint);
        trace.seconds.push(t0.elapsed().as_secs_f64());
        if cfg.tolerance > 0.0 && (prev - joint).abs() <= cfg.tolerance * joint.abs() {
            break;
        }
        prev = joint;
    }
    Ok((problem.image(x), trace, state))
}

fn penalty_value(
    st: &UltraRegState,
    cfg: &SolveConfig,
    anchor: Option<&[f64]>,
    x: &[f64],
) -> Result<f64> {
    let mut v = if cfg.beta > 0.0 {
        cfg.beta * st.value_and_gradient(x)?.0
    } else {
        0.0
    };
    if let (Some(a), true) = (anchor, cfg.mu > 0.0) {
        v += cfg.mu * x.iter().zip(a).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    }
    Ok(v)
}

/// Standalone PWLS-EP (no anchor).
pub fn pwls_ep_baseline(
    problem: &PwlsProblem,
    ep: &EpParams,
    x0: &Image,
    cfg: &SolveConfig,
) -> Result<Image> {
    let cfg = SolveConfig {
        mu: 0.0,
        ..cfg.clone()
    };
    Ok(solve_ep(problem, ep, None, x0, &cfg)?.0)
}

/// Standalone PWLS-ULTRA (no anchor).
pub fn pwls_ultra_baseline(
    problem: &PwlsProblem,
    spec: UltraSolveSpec,
    x0: &Image,
    cfg: &SolveConfig,
) -> Result<Image> {
    let cfg = SolveConfig {
        mu: 0.0,
        ..cfg.clone()
    };
    Ok(solve_ultra(problem, spec, None, x0, &cfg)?.0)
}
