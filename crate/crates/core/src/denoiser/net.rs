use crate::error::{Error, Result};
use crate::tomo::Image;

use super::weights::{DenoiserWeights, LayerSpec};

/// C = A·B (+ C when `accumulate`), with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(c.len() >= m * n);
    debug_assert!(
        m == 0 || k == 0 || a.len() as isize > (m as isize - 1) * rsa + (k as isize - 1) * csa
    );
    debug_assert!(
        k == 0 || n == 0 || b.len() as isize > (k as isize - 1) * rsb + (n as isize - 1) * csb
    );
    // SAFETY: the strides address only elements inside `a`, `b` and `c`,
    // as checked above, and `c` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 3×3, pad-1 patches of a `cin × h × w` tensor as a `(cin·9) × (h·w)` matrix.
fn im2col(x: &[f64], cin: usize, h: usize, w: usize, out: &mut Vec<f64>) {
    let hw = h * w;
    out.clear();
    out.resize(cin * 9 * hw, 0.0);
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut out[((c * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                    for xx in x0..x1 {
                        dst[xx] = src[xx + kx - 1];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`].
fn col2im(cols: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; cin * hw];
    for c in 0..cin {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                    for xx in x0..x1 {
                        dst[xx + kx - 1] += src[xx];
                    }
                }
            }
        }
    }
    out
}

enum Saved {
    Conv {
        cols: Vec<f64>,
        cin: usize,
        cout: usize,
        off: usize,
    },
    Relu {
        input: Vec<f64>,
    },
}

/// Network output on the normalized input, optionally saving what the
/// backward pass needs.
fn forward(
    w: &DenoiserWeights,
    u: Vec<f64>,
    h: usize,
    wd: usize,
    tape: Option<&mut Vec<Saved>>,
) -> Vec<f64> {
    let hw = h * wd;
    let shapes = w.spec.conv_shapes();
    let mut conv_i = 0;
    let mut act = u;
    let mut cols = Vec::new();
    let mut tape = tape;
    for l in &w.spec.layers {
        match l {
            LayerSpec::Conv { .. } => {
                let (cin, cout, off) = shapes[conv_i];
                conv_i += 1;
                im2col(&act, cin, h, wd, &mut cols);
                let k = cin * 9;
                let wt = &w.params[off..off + cout * k];
                let bias = &w.params[off + cout * k..off + cout * k + cout];
                let mut out = vec![0.0; cout * hw];
                for (o, b) in bias.iter().enumerate() {
                    out[o * hw..(o + 1) * hw].fill(*b);
                }
                gemm(
                    cout,
                    k,
                    hw,
                    wt,
                    (k as isize, 1),
                    &cols,
                    (hw as isize, 1),
                    &mut out,
                    true,
                );
                if let Some(t) = tape.as_deref_mut() {
                    t.push(Saved::Conv {
                        cols: std::mem::take(&mut cols),
                        cin,
                        cout,
                        off,
                    });
                }
                act = out;
            }
            LayerSpec::Relu => {
                if let Some(t) = tape.as_deref_mut() {
                    t.push(Saved::Relu { input: act.clone() });
                }
                act.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }
    act
}

/// Accumulates parameter gradients given d(loss)/d(network output).
fn backward(
    w: &DenoiserWeights,
    tape: Vec<Saved>,
    mut grad: Vec<f64>,
    h: usize,
    wd: usize,
    out: &mut [f64],
) {
    let hw = h * wd;
    for s in tape.into_iter().rev() {
        match s {
            Saved::Relu { input } => {
                for (g, x) in grad.iter_mut().zip(&input) {
                    if *x <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Saved::Conv {
                cols,
                cin,
                cout,
                off,
            } => {
                let k = cin * 9;
                for o in 0..cout {
                    out[off + cout * k + o] += grad[o * hw..(o + 1) * hw].iter().sum::<f64>();
                }
                gemm(
                    cout,
                    hw,
                    k,
                    &grad,
                    (hw as isize, 1),
                    &cols,
                    (1, hw as isize),
                    &mut out[off..off + cout * k],
                    true,
                );
                if off == 0 {
                    break;
                }
                let wt = &w.params[off..off + cout * k];
                let mut dcols = vec![0.0; k * hw];
                gemm(
                    k,
                    cout,
                    hw,
                    wt,
                    (1, k as isize),
                    &grad,
                    (hw as isize, 1),
                    &mut dcols,
                    false,
                );
                grad = col2im(&dcols, cin, h, wd);
            }
        }
    }
}

fn normalized(w: &DenoiserWeights, x: &Image) -> Vec<f64> {
    x.data()
        .iter()
        .map(|v| (v - w.norm.offset) / w.norm.scale)
        .collect()
}

/// Forward pass: x + scale·net((x − offset)/scale) with the residual skip,
/// offset + scale·net(...) without it.
pub fn apply(w: &DenoiserWeights, x: &Image) -> Result<Image> {
    w.validate()?;
    let net = forward(w, normalized(w, x), x.rows(), x.cols(), None);
    let data = x
        .data()
        .iter()
        .zip(&net)
        .map(|(xi, n)| {
            if w.spec.residual_skip {
                xi + w.norm.scale * n
            } else {
                w.norm.offset + w.norm.scale * n
            }
        })
        .collect();
    Image::new(x.rows(), x.cols(), x.pixel_size_mm(), data)
        .map_err(|_| Error::Model("denoiser produced non-finite output".into()))
}

/// Squared-error loss of one pair and its gradient, accumulated into `grad`.
pub(crate) fn pair_loss_and_gradient(
    w: &DenoiserWeights,
    x: &Image,
    target: &Image,
    grad: &mut [f64],
) -> f64 {
    let (h, wd) = (x.rows(), x.cols());
    let mut tape = Vec::new();
    let net = forward(w, normalized(w, x), h, wd, Some(&mut tape));
    let mut loss = 0.0;
    let dnet: Vec<f64> = (0..h * wd)
        .map(|j| {
            let base = if w.spec.residual_skip {
                x.data()[j]
            } else {
                w.norm.offset
            };
            let r = base + w.norm.scale * net[j] - target.data()[j];
            loss += r * r;
            2.0 * w.norm.scale * r
        })
        .collect();
    backward(w, tape, dnet, h, wd, grad);
    loss
}

/// Σ_n ‖G(x_n) − t_n‖² (HU²) and its exact gradient in the parameters.
pub fn loss_and_gradient(
    w: &DenoiserWeights,
    inputs: &[Image],
    targets: &[Image],
) -> Result<(f64, Vec<f64>)> {
    w.validate()?;
    if inputs.len() != targets.len() {
        return Err(Error::arg("inputs and targets differ in count"));
    }
    let mut grad = vec![0.0; w.params.len()];
    let mut loss = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        x.check_same_shape(t)?;
        let mut g = vec![0.0; w.params.len()];
        loss += pair_loss_and_gradient(w, x, t, &mut g);
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::super::weights::{DenoiserSpec, Normalization};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(
            h,
            w,
            1.0,
            (0..h * w)
                .map(|_| rng.random_range(600.0..1400.0))
                .collect(),
        )
        .unwrap()
    }

    fn random_weights(spec: DenoiserSpec, seed: u64) -> DenoiserWeights {
        let mut w = DenoiserWeights::kaiming(spec, Normalization::window(800.0, 1200.0), seed, 1.0)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
        for (_, cout, off) in w.spec.conv_shapes() {
            let k = w.spec.conv_shapes().iter().find(|s| s.2 == off).unwrap().0 * 9;
            for b in &mut w.params[off + cout * k..off + cout * k + cout] {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        w
    }

    #[test]
    fn zero_weights_are_identity() {
        let x = image(9, 7, 1);
        let w =
            DenoiserWeights::zeros(DenoiserSpec::reference(), Normalization::default()).unwrap();
        assert_eq!(apply(&w, &x).unwrap(), x);
    }

    #[test]
    fn network_is_not_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Image::new(
            8,
            8,
            1.0,
            (0..64).map(|_| rng.random_range(-500.0..500.0)).collect(),
        )
        .unwrap();
        let w = random_weights(DenoiserSpec::reference(), 2);
        let a = apply(&w, &x.map(|v| 2.0 * v)).unwrap();
        let b = apply(&w, &x).unwrap().map(|v| 2.0 * v);
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .any(|(p, q)| (p - q).abs() > 1e-6));
    }

    #[test]
    fn im2col_adjoint() {
        let (c, h, w) = (2, 5, 4);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut cols = Vec::new();
        im2col(&x, c, h, w, &mut cols);
        let v: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = cols.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&v, c, h, w)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = DenoiserSpec::plain(&[2]);
        for seed in 0..5 {
            let w = random_weights(spec.clone(), seed);
            let xs = vec![image(8, 8, 10 + seed), image(8, 8, 20 + seed)];
            let ts = vec![image(8, 8, 30 + seed), image(8, 8, 40 + seed)];
            let (_, g) = loss_and_gradient(&w, &xs, &ts).unwrap();
            let h = 1e-4;
            for i in 0..w.params.len() {
                let mut wp = w.clone();
                wp.params[i] += h;
                let mut wm = w.clone();
                wm.params[i] -= h;
                let fd = (loss_and_gradient(&wp, &xs, &ts).unwrap().0
                    - loss_and_gradient(&wm, &xs, &ts).unwrap().0)
                    / (2.0 * h);
                assert!(
                    (fd - g[i]).abs() <= 1e-4 * g[i].abs(),
                    "seed {seed} param {i}: fd {fd} vs {}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let w = random_weights(DenoiserSpec::reference(), 4);
        let xs = vec![image(6, 6, 1)];
        let ts = vec![apply(&w, &xs[0]).unwrap()];
        let (l, g) = loss_and_gradient(&w, &xs, &ts).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_data_doubles_loss_and_gradient() {
        let w = random_weights(DenoiserSpec::reference(), 5);
        let xs = vec![image(6, 6, 1), image(6, 6, 2)];
        let ts = vec![image(6, 6, 3), image(6, 6, 4)];
        let (l1, g1) = loss_and_gradient(&w, &xs, &ts).unwrap();
        let xs2 = [xs.clone(), xs].concat();
        let ts2 = [ts.clone(), ts].concat();
        let (l2, g2) = loss_and_gradient(&w, &xs2, &ts2).unwrap();
        assert!((l2 - 2.0 * l1).abs() <= 1e-12 * l2);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((b - 2.0 * a).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn translation_covariant_in_the_interior() {
        let w = random_weights(DenoiserSpec::reference(), 6);
        let big = image(20, 20, 9);
        let a = big.crop(0, 0, 16, 16).unwrap();
        let b = big.crop(2, 3, 16, 16).unwrap();
        let (ya, yb) = (apply(&w, &a).unwrap(), apply(&w, &b).unwrap());
        // Three stacked 3×3 convolutions see 3 pixels past each output.
        for r in 3..11 {
            for c in 3..10 {
                assert!((ya.get(r + 2, c + 3) - yb.get(r, c)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn serialization_round_trip_is_bit_identical() {
        let mut w = random_weights(DenoiserSpec::reference(), 8);
        w.quantize_f32();
        w.meta.loss_curve = vec![3.5, 2.25];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("layer.dn");
        w.save(&p).unwrap();
        let back = DenoiserWeights::load(&p).unwrap();
        assert_eq!(back, w);
        let x = image(10, 10, 2);
        assert_eq!(apply(&back, &x).unwrap(), apply(&w, &x).unwrap());
    }

    #[test]
    fn mismatched_weights_rejected() {
        let mut w =
            DenoiserWeights::zeros(DenoiserSpec::reference(), Normalization::default()).unwrap();
        w.params.pop();
        assert!(matches!(apply(&w, &image(4, 4, 0)), Err(Error::Model(_))));
    }
}
