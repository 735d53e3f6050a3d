use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Zeroes entries with |v| < gamma; ties survive.
pub fn hard_threshold(v: &[f64], gamma: f64) -> Vec<f64> {
    v.iter()
        .map(|&x| if x.abs() < gamma { 0.0 } else { x })
        .collect()
}

/// ‖v − H_γ(v)‖² + γ²‖H_γ(v)‖₀.
pub fn patch_cost(v: &[f64], gamma: f64) -> f64 {
    let g2 = gamma * gamma;
    v.iter()
        .map(|&x| if x.abs() < gamma { x * x } else { g2 })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseCodeResult {
    /// m×N codes, one column per patch.
    pub codes: DMatrix<f64>,
    /// Zero-based cluster index per patch.
    pub clusters: Vec<usize>,
    /// Σ_j τ_j · (sparsification cost of patch j under its cluster).
    pub objective: f64,
}

impl SparseCodeResult {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Patch indices of each cluster, in increasing order.
    pub fn members(&self, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); k];
        for (j, &c) in self.clusters.iter().enumerate() {
            out[c].push(j);
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.codes.iter().filter(|v| **v != 0.0).count()
    }
}

/// Extra per-patch cost added when choosing clusters:
/// `per_patch[j] * per_cluster[k]`.
#[derive(Clone, Copy, Debug)]
pub struct ClusterPenalty<'a> {
    pub per_cluster: &'a [f64],
    pub per_patch: &'a [f64],
}

const BLOCK: usize = 1024;

pub fn sparse_code_and_cluster(
    patches: &DMatrix<f64>,
    transforms: &[DMatrix<f64>],
    threshold: f64,
    tau: Option<&[f64]>,
) -> Result<SparseCodeResult> {
    sparse_code_and_cluster_with(patches, transforms, threshold, tau, None)
}

/// Per patch, picks the transform with the lowest sparsification cost (plus
/// the optional penalty; ties go to the lowest index) and hard-thresholds.
pub fn sparse_code_and_cluster_with(
    patches: &DMatrix<f64>,
    transforms: &[DMatrix<f64>],
    threshold: f64,
    tau: Option<&[f64]>,
    penalty: Option<ClusterPenalty<'_>>,
) -> Result<SparseCodeResult> {
    let m = patches.nrows();
    let n = patches.ncols();
    if transforms.is_empty() {
        return Err(Error::arg("no transforms"));
    }
    if let Some(t) = transforms.iter().find(|t| t.shape() != (m, m)) {
        return Err(Error::arg(format!(
            "transform is {:?} but patches have length {m}",
            t.shape()
        )));
    }
    if tau.is_some_and(|t| t.len() != n) {
        return Err(Error::arg("tau length differs from patch count"));
    }
    if let Some(p) = penalty {
        if p.per_cluster.len() != transforms.len() || p.per_patch.len() != n {
            return Err(Error::arg("cluster penalty has the wrong shape"));
        }
    }
    if n == 0 {
        return Ok(SparseCodeResult {
            codes: DMatrix::zeros(m, 0),
            clusters: Vec::new(),
            objective: 0.0,
        });
    }

    let starts: Vec<usize> = (0..n).step_by(BLOCK).collect();
    let blocks: Vec<(DMatrix<f64>, Vec<usize>, f64)> = starts
        .par_iter()
        .map(|&s| {
            let e = (s + BLOCK).min(n);
            let x = patches.columns(s, e - s);
            let mut best_cost = vec![f64::INFINITY; e - s];
            let mut best_k = vec![0usize; e - s];
            let mut codes = DMatrix::zeros(m, e - s);
            let mut raw = vec![0.0; e - s];
            for (k, omega) in transforms.iter().enumerate() {
                let v = omega * x;
                for j in 0..e - s {
                    let col = v.column(j);
                    let c = patch_cost(col.as_slice(), threshold);
                    let pen = penalty.map_or(0.0, |p| p.per_patch[s + j] * p.per_cluster[k]);
                    if c + pen < best_cost[j] {
                        best_cost[j] = c + pen;
                        best_k[j] = k;
                        raw[j] = c;
                        for (dst, &src) in codes.column_mut(j).iter_mut().zip(col.iter()) {
                            *dst = if src.abs() < threshold { 0.0 } else { src };
                        }
                    }
                }
            }
            let obj: f64 = (0..e - s)
                .map(|j| tau.map_or(1.0, |t| t[s + j]) * raw[j])
                .sum();
            (codes, best_k, obj)
        })
        .collect();

    let mut codes = DMatrix::zeros(m, n);
    let mut clusters = Vec::with_capacity(n);
    let mut objective = 0.0;
    for (&s, (c, k, o)) in starts.iter().zip(blocks) {
        codes.columns_mut(s, c.ncols()).copy_from(&c);
        clusters.extend(k);
        objective += o;
    }
    Ok(SparseCodeResult {
        codes,
        clusters,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn threshold_examples() {
        assert_eq!(
            hard_threshold(&[25.0, -10.0, 0.0], 20.0),
            vec![25.0, 0.0, 0.0]
        );
        assert_eq!(hard_threshold(&[-20.0, 19.999], 20.0), vec![-20.0, 0.0]);
        let v = [1e-300, -3.0, 0.0];
        assert_eq!(hard_threshold(&v, 0.0), v.to_vec());
    }

    #[test]
    fn zero_response_wins() {
        // Ω₁ maps the patch to large entries, Ω₂ annihilates it.
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let o1 = DMatrix::from_row_slice(2, 2, &[50.0, 0.0, 0.0, 50.0]);
        let o2 = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let r = sparse_code_and_cluster(&x, &[o1, o2], 20.0, None).unwrap();
        assert_eq!(r.clusters, vec![1]);
        assert_eq!(r.codes.column(0).as_slice(), &[0.0, 0.0]);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn empty_patch_set_is_valid() {
        let r =
            sparse_code_and_cluster(&DMatrix::zeros(4, 0), &[DMatrix::identity(4, 4)], 1.0, None)
                .unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn single_cluster_is_plain_thresholding() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(4, 30, |_, _| rng.random_range(-5.0..5.0));
        let o = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-2.0..2.0));
        let r = sparse_code_and_cluster(&x, &[o.clone()], 3.0, None).unwrap();
        assert!(r.clusters.iter().all(|&k| k == 0));
        let v = &o * &x;
        for j in 0..30 {
            assert_eq!(
                r.codes.column(j).as_slice(),
                hard_threshold(v.column(j).as_slice(), 3.0)
            );
        }
    }

    /// min over supports S of Σ_{i∉S} v_i² + γ²|S|, enumerating all 2^m
    /// supports; returns the cost and the minimizing code.
    fn brute_code(v: &[f64], gamma: f64) -> (f64, Vec<f64>) {
        let m = v.len();
        let mut best = (f64::INFINITY, vec![0.0; m]);
        for mask in 0u32..(1 << m) {
            let mut c = 0.0;
            let mut z = vec![0.0; m];
            for i in 0..m {
                if mask & (1 << i) != 0 {
                    c += gamma * gamma;
                    z[i] = v[i];
                } else {
                    c += v[i] * v[i];
                }
            }
            if c < best.0 {
                best = (c, z);
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn matches_exhaustive_search(k in 1usize..=4, m in 1usize..=6, n in 1usize..=100, seed in any::<u64>(), gamma in 0.1f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(m, n, |_, _| rng.random_range(-3.0..3.0));
            let bank: Vec<_> = (0..k).map(|_| DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.5..1.5))).collect();
            let tau: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
            let r = sparse_code_and_cluster(&x, &bank, gamma, Some(&tau)).unwrap();
            let mut objective = 0.0;
            for j in 0..n {
                let mut best: Option<(usize, f64, Vec<f64>)> = None;
                for (kk, o) in bank.iter().enumerate() {
                    let v: Vec<f64> = (0..m).map(|i| (0..m).map(|l| o[(i, l)] * x[(l, j)]).sum()).collect();
                    let (c, z) = brute_code(&v, gamma);
                    if best.as_ref().is_none_or(|b| c < b.1) {
                        best = Some((kk, c, z));
                    }
                }
                let (kk, c, z) = best.unwrap();
                prop_assert_eq!(r.clusters[j], kk);
                for i in 0..m {
                    prop_assert!((r.codes[(i, j)] - z[i]).abs() <= 1e-12 * (1.0 + z[i].abs()));
                }
                objective += tau[j] * c;
            }
            prop_assert!((r.objective - objective).abs() <= 1e-9 * (1.0 + objective));
        }
    }

    proptest! {
        #[test]
        fn permutation_equivariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 40;
            let x = DMatrix::from_fn(4, n, |_, _| rng.random_range(-5.0..5.0));
            let bank: Vec<_> = (0..3).map(|_| DMatrix::from_fn(4, 4, |_, _| rng.random_range(-2.0..2.0))).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let xp = DMatrix::from_fn(4, n, |i, j| x[(i, perm[j])]);
            let a = sparse_code_and_cluster(&x, &bank, 2.0, None).unwrap();
            let b = sparse_code_and_cluster(&xp, &bank, 2.0, None).unwrap();
            for j in 0..n {
                prop_assert_eq!(b.clusters[j], a.clusters[perm[j]]);
                prop_assert_eq!(b.codes.column(j), a.codes.column(perm[j]));
            }
        }
    }
}
