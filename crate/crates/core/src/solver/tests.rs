use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datasets::{random_phantom, simulate_case, PhantomRanges, SimulatedCase};
use crate::dose::{to_hu_mm, DoseParams};
use crate::regularizers::{kappa_map, EpParams, UltraRegState};
use crate::tomo::{
    FanBeamGeometry, FanBeamProjector, FilterKind, IdentityOperator, Image, LinearOperator,
    Sinogram,
};
use crate::ultra::{accumulate_patches, extract_patches_raw, PatchConfig, TransformBank};

struct Instance {
    proj: FanBeamProjector,
    case: SimulatedCase,
    y: Sinogram,
}

impl Instance {
    fn new(n: usize, seed: u64) -> Self {
        let geom = FanBeamGeometry::desk_for(n, 2 * n, (9 * n) / 4).unwrap();
        let proj = FanBeamProjector::new(&geom).unwrap();
        let truth = random_phantom(&PhantomRanges::desk(n), seed).unwrap();
        let case = simulate_case(
            "c",
            &proj,
            &truth,
            &DoseParams::new(1e4, 25.0, seed),
            FilterKind::Hann,
        )
        .unwrap();
        let y = to_hu_mm(&case.y);
        Instance { proj, case, y }
    }

    fn problem(&self) -> PwlsProblem<'_> {
        PwlsProblem::fan_beam(&self.proj, &self.y, &self.case.weights).unwrap()
    }
}

fn bank(seed: u64) -> TransformBank {
    let mut b = TransformBank::dct_init(
        3,
        PatchConfig::new(4, 2),
        &mut ChaCha8Rng::seed_from_u64(seed),
    );
    b.transforms[1] *= 0.8;
    b
}

fn monotone(costs: &[f64], start: f64) {
    let mut prev = start;
    for (i, &c) in costs.iter().enumerate() {
        assert!(
            c <= prev + 1e-9 * prev.abs(),
            "cost rose at {i}: {prev} -> {c}"
        );
        prev = c;
    }
}

#[test]
fn identity_problem_solves_in_one_step() {
    let op = IdentityOperator(6);
    let y = [1.0, -2.0, 3.5, 0.0, 7.0, 1e3];
    let w = [1.0; 6];
    let p = PwlsProblem::new(&op, &y, &w, 2, 3, 1.0).unwrap();
    let cfg = SolveConfig {
        majorizer_norm: Some(1.0),
        ..SolveConfig::with_iters(1, 1)
    };
    let (x, trace) =
        solve_quadratic_anchor(&p, None, None, &Image::zeros(2, 3, 1.0), &cfg).unwrap();
    assert_eq!(x.data(), &y);
    assert_eq!(trace.costs, vec![0.0]);
}

/// Conjugate gradients on H x = b for the fixed-code ULTRA quadratic, with
/// H and b assembled directly from the projector and the transforms.
fn cg_oracle(inst: &Instance, st: &UltraRegState, beta: f64, mu: f64, anchor: &[f64]) -> Vec<f64> {
    let op = &inst.proj;
    let w = inst.case.weights.data();
    let (rows, cols) = st.shape();
    let cfg = st.bank.patch;
    let gram: Vec<DMatrix<f64>> = st
        .bank
        .transforms
        .iter()
        .map(|o| o.transpose() * o)
        .collect();
    let hv = |v: &[f64]| -> Vec<f64> {
        let av: Vec<f64> = op.apply_vec(v).iter().zip(w).map(|(a, b)| a * b).collect();
        let mut out = op.apply_adjoint_vec(&av);
        let pv = extract_patches_raw(v, rows, cols, &cfg);
        let mut q = DMatrix::zeros(pv.nrows(), pv.ncols());
        for j in 0..pv.ncols() {
            q.set_column(j, &(&gram[st.codes.clusters[j]] * pv.column(j) * st.tau[j]));
        }
        let r = accumulate_patches(&q, rows, cols, &cfg);
        for i in 0..out.len() {
            out[i] += beta * r[i] + mu * v[i];
        }
        out
    };
    let wy: Vec<f64> = inst.y.data().iter().zip(w).map(|(a, b)| a * b).collect();
    let mut b = op.apply_adjoint_vec(&wy);
    let mut oz = DMatrix::zeros(cfg.m(), st.codes.len());
    for j in 0..st.codes.len() {
        oz.set_column(
            j,
            &(st.bank.transforms[st.codes.clusters[j]].transpose()
                * st.codes.codes.column(j)
                * st.tau[j]),
        );
    }
    let bz = accumulate_patches(&oz, rows, cols, &cfg);
    for i in 0..b.len() {
        b[i] += beta * bz[i] + mu * anchor[i];
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = vec![0.0; b.len()];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let b2 = rr;
    for _ in 0..5000 {
        if rr <= 1e-20 * b2 {
            break;
        }
        let hp = hv(&p);
        let a = rr / dot(&p, &hp);
        for i in 0..x.len() {
            x[i] += a * p[i];
            r[i] -= a * hp[i];
        }
        let rn = dot(&r, &r);
        for i in 0..x.len() {
            p[i] = r[i] + rn / rr * p[i];
        }
        rr = rn;
    }
    x
}

#[test]
fn quadratic_solve_matches_cg_oracle() {
    for seed in 0..3 {
        let inst = Instance::new(32, seed);
        let p = inst.problem();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau: Vec<f64> = (0..225).map(|_| rng.random_range(0.5..1.5)).collect();
        let st = UltraRegState::new(bank(seed), 20.0, Some(tau), &inst.case.x0).unwrap();
        let cfg = SolveConfig {
            beta: 2e3,
            mu: 1e3,
            ..SolveConfig::with_iters(400, 1)
        };
        let anchor = inst.case.truth.clone();
        let (x, trace) =
            solve_quadratic_anchor(&p, Some(&st), Some(&anchor), &inst.case.x0, &cfg).unwrap();
        let xo = cg_oracle(&inst, &st, cfg.beta, cfg.mu, anchor.data());
        let cost = |v: &[f64]| {
            p.data_cost(v)
                + cfg.beta * st.value_and_gradient(v).unwrap().0
                + cfg.mu
                    * v.iter()
                        .zip(anchor.data())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
        };
        let (c, co) = (cost(x.data()), cost(&xo));
        assert!(
            (c - co).abs() <= 1e-5 * co,
            "seed {seed}: {c} vs oracle {co}"
        );
        monotone(&trace.costs, trace.initial_cost);
    }
}

#[test]
fn ep_and_ultra_costs_never_increase() {
    let inst = Instance::new(64, 7);
    let p = inst.problem();
    let kappa = kappa_map(&inst.proj, inst.case.weights.data()).unwrap();
    let ep = EpParams::new(20.0).with_kappa(kappa);
    let cfg = SolveConfig {
        beta: 2f64.powi(15),
        ..SolveConfig::with_iters(20, 5)
    };
    let (_, t) = solve_ep(&p, &ep, None, &inst.case.x0, &cfg).unwrap();
    monotone(&t.costs, t.initial_cost);
    assert!(t.costs.windows(2).all(|w| w[1] < w[0]));
    let cfg = SolveConfig {
        beta: 5e3,
        mu: 5e2,
        outer_iters: 6,
        ..cfg
    };
    let spec = UltraSolveSpec {
        bank: &bank(1),
        tau: None,
    };
    let (_, t, _) = solve_ultra(&p, spec, Some(&inst.case.x0), &inst.case.x0, &cfg).unwrap();
    monotone(&t.costs, t.initial_cost);
    monotone(&t.inner_costs, t.initial_cost);
}

#[test]
fn ep_without_regularization_is_weighted_least_squares() {
    let inst = Instance::new(24, 3);
    let p = inst.problem();
    let cfg = SolveConfig::with_iters(15, 1);
    let (a, _) = solve_ep(&p, &EpParams::new(20.0), None, &inst.case.x0, &cfg).unwrap();
    let (b, _) = solve_quadratic_anchor(&p, None, None, &inst.case.x0, &cfg).unwrap();
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((u - v).abs() <= 1e-10 * v.abs().max(1.0));
    }
}

#[test]
fn converged_point_is_stationary() {
    let inst = Instance::new(16, 5);
    let p = inst.problem();
    let ep = EpParams::new(20.0);
    let cfg = SolveConfig {
        beta: 2f64.powi(10),
        mu: 1e2,
        majorizer_norm: Some(p.majorizer_norm(&SolveConfig::default()).unwrap()),
        ..SolveConfig::with_iters(4000, 1)
    };
    let anchor = inst.case.truth.clone();
    let (x, _) = solve_ep(&p, &ep, Some(&anchor), &inst.case.x0, &cfg).unwrap();
    let cfg5 = SolveConfig {
        outer_iters: 5,
        ..cfg
    };
    let (x2, _) = solve_ep(&p, &ep, Some(&anchor), &x, &cfg5).unwrap();
    let rms = (x
        .data()
        .iter()
        .zip(x2.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / x.len() as f64)
        .sqrt();
    assert!(rms < 1e-8, "moved {rms}");
}

#[test]
fn large_anchor_weight_pins_the_solution() {
    let inst = Instance::new(24, 2);
    let p = inst.problem();
    let norm = p.majorizer_norm(&SolveConfig::default()).unwrap();
    let anchor = inst.case.truth.clone();
    let rms = |mu: f64| {
        let cfg = SolveConfig {
            mu,
            majorizer_norm: Some(norm),
            ..SolveConfig::with_iters(30, 1)
        };
        let (x, _) = solve_quadratic_anchor(&p, None, Some(&anchor), &inst.case.x0, &cfg).unwrap();
        (x.data()
            .iter()
            .zip(anchor.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / x.len() as f64)
            .sqrt()
    };
    assert!(rms(1e8 * norm) < 1e-3);
    let sweep: Vec<f64> = [1e-1, 1e0, 1e1, 1e2, 1e3]
        .iter()
        .map(|s| rms(s * norm))
        .collect();
    assert!(sweep.windows(2).all(|w| w[1] < w[0]), "{sweep:?}");
}

#[test]
fn infinite_threshold_reduces_to_quadratic_smoothing() {
    let inst = Instance::new(24, 4);
    let p = inst.problem();
    let b = bank(2);
    let cfg = SolveConfig {
        beta: 1e3,
        gamma: 1e30,
        ..SolveConfig::with_iters(1, 8)
    };
    let (xu, _, st) = solve_ultra(
        &p,
        UltraSolveSpec {
            bank: &b,
            tau: None,
        },
        None,
        &inst.case.x0,
        &cfg,
    )
    .unwrap();
    assert!(st.codes.codes.iter().all(|v| *v == 0.0));
    let st0 = UltraRegState::new(b.clone(), 1e30, None, &inst.case.x0).unwrap();
    let cfgq = SolveConfig {
        outer_iters: 8,
        ..cfg
    };
    let (xq, _) = solve_quadratic_anchor(&p, Some(&st0), None, &inst.case.x0, &cfgq).unwrap();
    assert_eq!(xu, xq);
}

#[test]
fn baseline_wrapper_matches_solver_and_trace_length() {
    let inst = Instance::new(24, 6);
    let p = inst.problem();
    let ep = EpParams::new(20.0);
    let cfg = SolveConfig {
        beta: 2f64.powi(16),
        ..SolveConfig::with_iters(100, 1)
    };
    let a = pwls_ep_baseline(&p, &ep, &inst.case.x0, &cfg).unwrap();
    let (b, t) = solve_ep(&p, &ep, None, &inst.case.x0, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(t.iterations(), 100);
    let mut csv = Vec::new();
    t.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 102);
    assert!(text.starts_with("iteration,cost,seconds\n0,"));
}

#[test]
fn rejects_mismatched_inputs() {
    let op = IdentityOperator(4);
    assert!(PwlsProblem::new(&op, &[0.0; 3], &[1.0; 4], 2, 2, 1.0).is_err());
    assert!(PwlsProblem::new(&op, &[0.0; 4], &[-1.0; 4], 2, 2, 1.0).is_err());
    let p = PwlsProblem::new(&op, &[0.0; 4], &[1.0; 4], 2, 2, 1.0).unwrap();
    assert!(solve_quadratic_anchor(
        &p,
        None,
        None,
        &Image::zeros(3, 2, 1.0),
        &SolveConfig::default()
    )
    .is_err());
    let bad = SolveConfig::with_iters(0, 1);
    assert!(solve_quadratic_anchor(&p, None, None, &Image::zeros(2, 2, 1.0), &bad).is_err());
}
