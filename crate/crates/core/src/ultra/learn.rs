use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bank::{random_orthogonal, TransformBank};
use super::coding::{sparse_code_and_cluster_with, ClusterPenalty};
use super::patches::{extract_patches, PatchConfig};
use crate::error::{Error, Result};
use crate::tomo::Image;

/// Q(Ω) = ‖Ω‖²_F − log|det Ω|.
pub fn transform_penalty(omega: &DMatrix<f64>) -> f64 {
    let s = omega.clone().svd(false, false).singular_values;
    omega.norm_squared() - s.iter().map(|v| v.ln()).sum::<f64>()
}

/// ‖ΩX − Z‖²_F + λ Q(Ω).
pub fn transform_objective(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    (omega * x - z).norm_squared() + lambda * transform_penalty(omega)
}

/// Global minimizer of ‖ΩX − Z‖²_F + λ(‖Ω‖²_F − log|det Ω|).
pub fn update_transform(x: &DMatrix<f64>, z: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if x.shape() != z.shape() {
        return Err(Error::arg(format!(
            "patch matrix {:?} vs code matrix {:?}",
            x.shape(),
            z.shape()
        )));
    }
    if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite patches or codes".into()));
    }
    update_from_stats(&(x * x.transpose()), &(x * z.transpose()), lambda)
}

/// Same as [`update_transform`] given XXᵀ and XZᵀ.
fn update_from_stats(
    gram: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::arg(format!("lambda must be positive, got {lambda}")));
    }
    let m = gram.nrows();
    let g = gram + DMatrix::identity(m, m) * lambda;
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::Data("XXᵀ + λI is not positive definite".into()))?;
    let linv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(m, m))
        .ok_or_else(|| Error::Data("singular Cholesky factor".into()))?;
    let svd = (&linv * cross).svd(true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::Internal("SVD without U".into()))?;
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Internal("SVD without Vᵀ".into()))?;
    let d = DVector::from_iterator(
        m,
        svd.singular_values
            .iter()
            .map(|s| 0.5 * (s + (s * s + 2.0 * lambda).sqrt())),
    );
    let omega = vt.transpose() * DMatrix::from_diagonal(&d) * u.transpose() * linv;
    if omega.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(
            "transform update produced non-finite entries".into(),
        ));
    }
    Ok(omega)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub k: usize,
    pub patch: PatchConfig,
    pub iters: usize,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_lambda0() -> f64 {
    31.0
}

fn default_eta() -> f64 {
    20.0
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            k: 5,
            patch: PatchConfig::default(),
            iters: 100,
            lambda0: default_lambda0(),
            eta: default_eta(),
            seed: 0,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.iters == 0 {
            return Err(Error::arg("K and iters must be at least 1"));
        }
        if !(self.lambda0 > 0.0) || !(self.eta >= 0.0) {
            return Err(Error::arg("lambda0 must be positive and eta nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearnTrace {
    /// Learning objective after each alternation.
    pub objective: Vec<f64>,
    pub cluster_sizes: Vec<Vec<usize>>,
    pub reseeds: usize,
}

pub fn learn_ultra(images: &[Image], cfg: &LearnConfig) -> Result<(TransformBank, LearnTrace)> {
    if images.is_empty() {
        return Err(Error::arg("no training images"));
    }
    let mats = images
        .iter()
        .map(|img| extract_patches(img, &cfg.patch))
        .collect::<Result<Vec<_>>>()?;
    let total: usize = mats.iter().map(|p| p.ncols()).sum();
    let mut x = DMatrix::zeros(cfg.patch.m(), total);
    let mut at = 0;
    for p in mats {
        x.columns_mut(at, p.ncols()).copy_from(&p);
        at += p.ncols();
    }
    learn_ultra_from_patches(&x, cfg)
}

const GATHER: usize = 2048;

struct ClusterStats {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    z_sq: f64,
    nnz: usize,
    x_sq: f64,
}

fn cluster_stats(x: &DMatrix<f64>, z: &DMatrix<f64>, idx: &[usize], x_sq: &[f64]) -> ClusterStats {
    let m = x.nrows();
    let mut gram = DMatrix::zeros(m, m);
    let mut cross = DMatrix::zeros(m, m);
    for chunk in idx.chunks(GATHER) {
        let xb = DMatrix::from_fn(m, chunk.len(), |i, c| x[(i, chunk[c])]);
        let zb = DMatrix::from_fn(m, chunk.len(), |i, c| z[(i, chunk[c])]);
        gram += &xb * xb.transpose();
        cross += &xb * zb.transpose();
    }
    let mut z_sq = 0.0;
    let mut nnz = 0;
    let mut xs = 0.0;
    for &j in idx {
        for v in z.column(j).iter() {
            z_sq += v * v;
            nnz += (*v != 0.0) as usize;
        }
        xs += x_sq[j];
    }
    ClusterStats {
        gram,
        cross,
        z_sq,
        nnz,
        x_sq: xs,
    }
}

/// Alternating minimization of the union-of-transforms learning objective
/// Σ_k Σ_{i∈C_k} ‖Ω_kX_i − Z_i‖² + η²‖Z_i‖₀ + λ_k Q(Ω_k), with
/// λ_k = λ₀ Σ_{i∈C_k} ‖X_i‖². Patches are the columns of `x`.
pub fn learn_ultra_from_patches(
    x: &DMatrix<f64>,
    cfg: &LearnConfig,
) -> Result<(TransformBank, LearnTrace)> {
    cfg.validate()?;
    if x.nrows() != cfg.patch.m() {
        return Err(Error::arg(
            "patch length differs from configured patch size",
        ));
    }
    if x.ncols() == 0 {
        return Err(Error::arg("no training patches"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite training patches".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bank = TransformBank::dct_init(cfg.k, cfg.patch, &mut rng);
    bank.lambda0 = cfg.lambda0;
    bank.eta = cfg.eta;
    bank.training_seed = cfg.seed;
    let dct = bank.transforms[0].clone();

    let x_sq: Vec<f64> = x.column_iter().map(|c| c.norm_squared()).collect();
    let per_patch: Vec<f64> = x_sq.iter().map(|v| cfg.lambda0 * v).collect();
    let eta2 = cfg.eta * cfg.eta;
    let mut trace = LearnTrace::default();

    for it in 0..cfg.iters {
        // The clustering includes each patch's share of λ_k Q(Ω_k), which
        // makes this step an exact minimization of the learning objective.
        let q: Vec<f64> = bank.transforms.iter().map(transform_penalty).collect();
        let sc = sparse_code_and_cluster_with(
            x,
            &bank.transforms,
            cfg.eta,
            None,
            Some(ClusterPenalty {
                per_cluster: &q,
                per_patch: &per_patch,
            }),
        )?;
        let members = sc.members(cfg.k);
        trace
            .cluster_sizes
            .push(members.iter().map(Vec::len).collect());

        for (k, idx) in members.iter().enumerate() {
            if idx.is_empty() {
                log::warn!("alternation {it}: cluster {k} is empty; re-seeding its transform");
                bank.transforms[k] = &dct * random_orthogonal(cfg.patch.m(), &mut rng);
                trace.reseeds += 1;
            }
        }

        let updates: Vec<Result<Option<(DMatrix<f64>, f64)>>> = members
            .par_iter()
            .map(|idx| {
                if idx.is_empty() {
                    return Ok(None);
                }
                let st = cluster_stats(x, &sc.codes, idx, &x_sq);
                let lambda = cfg.lambda0 * st.x_sq;
                let omega = update_from_stats(&st.gram, &st.cross, lambda)?;
                // ‖ΩX − Z‖² = tr(ΩXXᵀΩᵀ) − 2 tr(ΩXZᵀ) + ‖Z‖²
                let fit = (&omega * &st.gram).component_mul(&omega).sum()
                    - 2.0 * (&omega * &st.cross).trace()
                    + st.z_sq;
                let obj = fit.max(0.0) + eta2 * st.nnz as f64 + lambda * transform_penalty(&omega);
                Ok(Some((omega, obj)))
            })
            .collect();

        let mut objective = 0.0;
        for (k, u) in updates.into_iter().enumerate() {
            if let Some((omega, obj)) = u? {
                bank.transforms[k] = omega;
                objective += obj;
            }
        }
        log::debug!("alternation {it}: objective {objective:.6e}");
        trace.objective.push(objective);
    }

    bank.quantize_f32();
    bank.validate()?;
    Ok((bank, trace))
}
