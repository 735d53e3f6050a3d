use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tomo::Image;
use crate::ultra::{
    accumulate_patches, extract_patches_raw, patch_coverage, sparse_code_and_cluster,
    SparseCodeResult, TransformBank,
};

/// Union-of-transforms regularizer Σ_j τ_j(‖Ω_{k_j}P_jx − z_j‖² + γ²‖z_j‖₀)
/// together with its current codes and cluster assignments.
#[derive(Clone, Debug)]
pub struct UltraRegState {
    pub bank: TransformBank,
    pub gamma: f64,
    pub tau: Vec<f64>,
    pub codes: SparseCodeResult,
    rows: usize,
    cols: usize,
}

const BLOCK: usize = 1024;

impl UltraRegState {
    /// Builds the state with codes and clusters refreshed at `x`.
    pub fn new(bank: TransformBank, gamma: f64, tau: Option<Vec<f64>>, x: &Image) -> Result<Self> {
        bank.validate()?;
        if !(gamma >= 0.0) {
            return Err(Error::arg("gamma must be nonnegative"));
        }
        let cfg = bank.patch;
        cfg.validate_for(x.rows(), x.cols())?;
        let n = cfg.count(x.rows(), x.cols());
        let tau = tau.unwrap_or_else(|| vec![1.0; n]);
        if tau.len() != n {
            return Err(Error::arg(format!(
                "tau has {} entries for {n} patches",
                tau.len()
            )));
        }
        let mut st = UltraRegState {
            codes: SparseCodeResult {
                codes: DMatrix::zeros(cfg.m(), 0),
                clusters: Vec::new(),
                objective: 0.0,
            },
            bank,
            gamma,
            tau,
            rows: x.rows(),
            cols: x.cols(),
        };
        st.refresh(x.data())?;
        Ok(st)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Exact minimization over codes and clusters at the image `x`.
    pub fn refresh(&mut self, x: &[f64]) -> Result<()> {
        let p = extract_patches_raw(x, self.rows, self.cols, &self.bank.patch);
        self.codes =
            sparse_code_and_cluster(&p, &self.bank.transforms, self.gamma, Some(&self.tau))?;
        Ok(())
    }

    /// Replaces every code by zero, keeping clusters.
    pub fn zero_codes(&mut self) {
        self.codes.codes.fill(0.0);
    }

    fn check(&self, len: usize) -> Result<()> {
        let n = self.bank.patch.count(self.rows, self.cols);
        if len != self.rows * self.cols
            || self.codes.clusters.len() != n
            || self.codes.codes.ncols() != n
            || self.codes.codes.nrows() != self.bank.m()
            || self.codes.clusters.iter().any(|&k| k >= self.bank.k())
        {
            return Err(Error::Internal(
                "ULTRA state inconsistent with image or bank".into(),
            ));
        }
        Ok(())
    }

    /// γ² Σ τ_j ‖z_j‖₀ (constant for fixed codes).
    pub fn sparsity_term(&self) -> f64 {
        let g2 = self.gamma * self.gamma;
        self.codes
            .codes
            .column_iter()
            .zip(&self.tau)
            .map(|(z, t)| t * g2 * z.iter().filter(|v| **v != 0.0).count() as f64)
            .sum()
    }

    /// Value and gradient of the regularizer for fixed codes and clusters.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(x.len())?;
        let cfg = &self.bank.patch;
        let m = cfg.m();
        let px = extract_patches_raw(x, self.rows, self.cols, cfg);
        let n = px.ncols();
        let starts: Vec<usize> = (0..n).step_by(BLOCK).collect();
        let blocks: Vec<(DMatrix<f64>, f64)> = starts
            .par_iter()
            .map(|&s| {
                let e = (s + BLOCK).min(n);
                let mut out = DMatrix::zeros(m, e - s);
                let mut val = 0.0;
                for (k, omega) in self.bank.transforms.iter().enumerate() {
                    let idx: Vec<usize> = (s..e).filter(|&j| self.codes.clusters[j] == k).collect();
                    if idx.is_empty() {
                        continue;
                    }
                    let xb = DMatrix::from_fn(m, idx.len(), |i, c| px[(i, idx[c])]);
                    let mut r = omega * xb;
                    for (c, &j) in idx.iter().enumerate() {
                        let mut col = r.column_mut(c);
                        col -= self.codes.codes.column(j);
                        val += self.tau[j] * col.norm_squared();
                        col *= 2.0 * self.tau[j];
                    }
                    let g = omega.tr_mul(&r);
                    for (c, &j) in idx.iter().enumerate() {
                        out.column_mut(j - s).copy_from(&g.column(c));
                    }
                }
                (out, val)
            })
            .collect();
        let mut gp = DMatrix::zeros(m, n);
        let mut value = self.sparsity_term();
        for (&s, (b, v)) in starts.iter().zip(blocks) {
            gp.columns_mut(s, b.ncols()).copy_from(&b);
            value += v;
        }
        Ok((value, accumulate_patches(&gp, self.rows, self.cols, cfg)))
    }

    /// Diagonal majorizer of the Hessian: 2 max_k λmax(Ω_kᵀΩ_k) Σ_j τ_j P_jᵀP_j.
    pub fn majorizer_diag(&self) -> Vec<f64> {
        let c = 2.0 * self.bank.max_gram_eigenvalue();
        patch_coverage(self.rows, self.cols, &self.bank.patch, Some(&self.tau))
            .into_iter()
            .map(|v| c * v)
            .collect()
    }
}

pub fn ultra_reg_value(x: &Image, st: &UltraRegState) -> Result<f64> {
    Ok(st.value_and_gradient(x.data())?.0)
}

pub fn ultra_reg_gradient(x: &Image, st: &UltraRegState) -> Result<Vec<f64>> {
    Ok(st.value_and_gradient(x.data())?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ultra::{extract_patches, PatchConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Image, UltraRegState) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Image::new(
            7,
            6,
            1.0,
            (0..42).map(|_| rng.random_range(-50.0..50.0)).collect(),
        )
        .unwrap();
        let mut bank = TransformBank::dct_init(3, PatchConfig::new(3, 1), &mut rng);
        bank.transforms[2] *= 1.7;
        let tau: Vec<f64> = (0..20).map(|_| rng.random_range(0.5..1.5)).collect();
        let st = UltraRegState::new(bank, 15.0, Some(tau), &x).unwrap();
        (x, st)
    }

    #[test]
    fn matches_direct_summation() {
        let (x, st) = setup(1);
        let p = extract_patches(&x, &st.bank.patch).unwrap();
        let mut expect = 0.0;
        for j in 0..p.ncols() {
            let k = st.codes.clusters[j];
            let r = &st.bank.transforms[k] * p.column(j) - st.codes.codes.column(j);
            let nnz = st
                .codes
                .codes
                .column(j)
                .iter()
                .filter(|v| **v != 0.0)
                .count();
            expect += st.tau[j] * (r.norm_squared() + 225.0 * nnz as f64);
        }
        let v = ultra_reg_value(&x, &st).unwrap();
        assert!((v - expect).abs() <= 1e-12 * expect);
        assert!((v - st.codes.objective).abs() <= 1e-9 * expect);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, st) = setup(2);
        let g = ultra_reg_gradient(&x, &st).unwrap();
        let h = 1e-3;
        for j in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[j] += h;
            let mut xm = x.clone();
            xm.data_mut()[j] -= h;
            let fd = (ultra_reg_value(&xp, &st).unwrap() - ultra_reg_value(&xm, &st).unwrap())
                / (2.0 * h);
            assert!(
                (fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1.0),
                "{j}: {fd} vs {}",
                g[j]
            );
        }
    }

    #[test]
    fn refresh_never_increases_value() {
        let (x, mut st) = setup(3);
        let y = x.map(|v| v * 0.8 + 3.0);
        let before = ultra_reg_value(&y, &st).unwrap();
        st.refresh(y.data()).unwrap();
        assert!(ultra_reg_value(&y, &st).unwrap() <= before);
    }

    #[test]
    fn zero_image_zero_gamma_is_zero() {
        let x = Image::zeros(5, 5, 1.0);
        let bank =
            TransformBank::dct_init(2, PatchConfig::new(2, 1), &mut ChaCha8Rng::seed_from_u64(0));
        let st = UltraRegState::new(bank, 0.0, None, &x).unwrap();
        assert_eq!(ultra_reg_value(&x, &st).unwrap(), 0.0);
    }

    #[test]
    fn majorizer_dominates_hessian() {
        let (x, st) = setup(4);
        let d = st.majorizer_diag();
        let (v0, g0) = st.value_and_gradient(x.data()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let dx: Vec<f64> = (0..42).map(|_| rng.random_range(-10.0..10.0)).collect();
            let z: Vec<f64> = x.data().iter().zip(&dx).map(|(a, b)| a + b).collect();
            let (v, _) = st.value_and_gradient(&z).unwrap();
            let bound = v0
                + g0.iter().zip(&dx).map(|(a, b)| a * b).sum::<f64>()
                + 0.5 * d.iter().zip(&dx).map(|(a, b)| a * b * b).sum::<f64>();
            assert!(v <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn inconsistent_state_is_internal_error() {
        let (_, st) = setup(5);
        assert!(matches!(
            st.value_and_gradient(&[0.0; 10]),
            Err(Error::Internal(_))
        ));
    }
}
