use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datasets::{random_phantom, simulate_case, PhantomRanges};
use crate::denoiser::{apply, train, DenoiserSpec, TrainConfig};
use crate::dose::{to_hu_mm, DoseParams};
use crate::metrics::rmse;
use crate::regularizers::{kappa_map, EpParams};
use crate::solver::{solve_ep, PwlsProblem, SolveConfig};
use crate::tomo::{FanBeamGeometry, FanBeamProjector, FilterKind, Image};
use crate::ultra::{PatchConfig, TransformBank};
use crate::Error;

const N: usize = 24;

fn setup(n_cases: usize, seed: u64) -> (FanBeamProjector, Vec<TrainingCase>) {
    let geom = FanBeamGeometry::desk_for(N, 2 * N, 2 * N).unwrap();
    let proj = FanBeamProjector::new(&geom).unwrap();
    let cases = (0..n_cases as u64)
        .map(|i| {
            let truth = random_phantom(&PhantomRanges::desk(N), seed + i).unwrap();
            let dose = DoseParams::new(1e4, 25.0, seed + 100 + i);
            simulate_case(format!("c{i}"), &proj, &truth, &dose, FilterKind::Hann)
                .unwrap()
                .into()
        })
        .collect();
    (proj, cases)
}

fn small_config(layers: usize) -> SuperConfig {
    let mut c = SuperConfig::desk(false);
    c.layers = layers;
    c.denoiser = DenoiserSpec::plain(&[4]);
    c.training = TrainConfig {
        epochs: 3,
        learning_rate: 1e-3,
        batch: 2,
        seed: 7,
        ..TrainConfig::default()
    };
    c.solver = SolveConfig::with_iters(6, 2);
    c
}

fn ultra_config(layers: usize) -> (SuperConfig, TransformBank) {
    let mut c = small_config(layers);
    c.prior = PriorConfig::Ultra {
        weighting: crate::regularizers::SpatialWeighting::Certainty,
    };
    c.beta = 20.0;
    c.mu = 2000.0;
    c.solver.outer_iters = 2;
    let bank =
        TransformBank::dct_init(2, PatchConfig::new(4, 2), &mut ChaCha8Rng::seed_from_u64(1));
    (c, bank)
}

fn replay(t: &SuperTraining, cases: &[TrainingCase], proj: &FanBeamProjector) {
    for (n, c) in cases.iter().enumerate() {
        let r = super_reconstruct(&c.y, &c.weights, &c.x0, &t.model, proj).unwrap();
        assert_eq!(r.layers.len(), t.model.len());
        for (a, b) in r.layers.iter().zip(&t.train_outputs[n]) {
            assert_eq!(a.data(), b.data(), "case {}", c.id);
        }
        assert_eq!(&r.image, r.layers.last().unwrap());
    }
}

#[test]
fn reconstruction_replays_training_bit_for_bit() {
    let (proj, cases) = setup(3, 10);
    let t = super_train(&cases, &cases[..1], &small_config(2), &proj, None).unwrap();
    assert_eq!(t.model.metrics.len(), 2);
    assert!(t.model.metrics.iter().all(|m| m.val_rmse.is_some()));
    replay(&t, &cases, &proj);

    let (cfg, bank) = ultra_config(2);
    let t = super_train(&cases, &[], &cfg, &proj, Some(&bank)).unwrap();
    assert!(t.model.metrics.iter().all(|m| m.val_rmse.is_none()));
    replay(&t, &cases, &proj);
}

#[test]
fn training_is_deterministic_and_greedy() {
    let (proj, cases) = setup(3, 20);
    let a = super_train(&cases, &[], &small_config(2), &proj, None).unwrap();
    let b = super_train(&cases, &[], &small_config(2), &proj, None).unwrap();
    assert_eq!(a.model.model_hash(), b.model.model_hash());
    let longer = super_train(&cases, &[], &small_config(3), &proj, None).unwrap();
    assert_eq!(longer.model.layers[..2], a.model.layers[..]);
    assert_ne!(longer.model.config_hash(), a.model.config_hash());
}

#[test]
fn single_sequential_layer_is_plain_denoising() {
    let (proj, cases) = setup(3, 30);
    let mut cfg = small_config(1);
    cfg.mode = SuperMode::SequentialOnly;
    let t = super_train(&cases, &[], &cfg, &proj, None).unwrap();
    let pairs: Vec<_> = cases
        .iter()
        .map(|c| (c.x0.clone(), c.x_star.clone()))
        .collect();
    let standalone = train(&cfg.denoiser, None, &pairs, &cfg.training).unwrap();
    assert_eq!(t.model.layers[0], standalone);
    for c in &cases {
        let mut d = apply(&standalone, &c.x0).unwrap();
        d.quantize_f32();
        let r = super_reconstruct(&c.y, &c.weights, &c.x0, &t.model, &proj).unwrap();
        assert_eq!(r.image, d);
        assert!(r.traces.is_empty());
    }
}

#[test]
fn ablations_ignore_the_disabled_terms() {
    let (proj, cases) = setup(2, 40);
    let run = |cfg: &SuperConfig| {
        let t = super_train(&cases, &[], cfg, &proj, None).unwrap();
        t.train_outputs
            .iter()
            .map(|o| o.last().unwrap().clone())
            .collect::<Vec<Image>>()
    };

    let mut seq = small_config(2);
    seq.mode = SuperMode::SequentialOnly;
    let base = run(&seq);
    let mut other = seq.clone();
    other.beta = 1e6;
    other.mu = 3.0;
    other.solver = SolveConfig::with_iters(1, 1);
    assert_eq!(run(&other), base);

    let mut dt = small_config(2);
    dt.mode = SuperMode::DataTermOnly;
    let base = run(&dt);
    let mut other = dt.clone();
    other.prior = PriorConfig::None;
    other.mu = 1e5;
    other.beta = 7.0;
    assert_eq!(run(&other), base);

    let mut sup = small_config(2);
    sup.mode = SuperMode::SupervisedRegOnly;
    for x in run(&sup) {
        assert!(x.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn zero_mu_still_runs_mbir_from_the_denoised_image() {
    let (proj, cases) = setup(2, 50);
    let mut cfg = small_config(1);
    cfg.mu = 0.0;
    let t = super_train(&cases, &[], &cfg, &proj, None).unwrap();
    let c = &cases[0];
    let mut d = apply(&t.model.layers[0], &c.x0).unwrap();
    d.quantize_f32();
    let y = to_hu_mm(&c.y);
    let p = PwlsProblem::fan_beam(&proj, &y, &c.weights).unwrap();
    let solve = SolveConfig {
        beta: cfg.beta,
        majorizer_norm: Some(p.majorizer_norm(&cfg.solver).unwrap()),
        ..cfg.solver.clone()
    };
    let ep = EpParams::new(20.0).with_kappa(kappa_map(&proj, c.weights.data()).unwrap());
    let (mut x, _) = solve_ep(&p, &ep, None, &d, &solve).unwrap();
    x.quantize_f32();
    assert_eq!(t.train_outputs[0][0], x);
    assert_ne!(x, d);
}

#[test]
fn per_layer_cost_traces_are_monotone() {
    let (proj, cases) = setup(2, 60);
    let t = super_train(&cases, &[], &small_config(2), &proj, None).unwrap();
    let c = &cases[1];
    let r = super_reconstruct(&c.y, &c.weights, &c.x0, &t.model, &proj).unwrap();
    assert_eq!(r.traces.len(), 2);
    for tr in &r.traces {
        let mut prev = tr.initial_cost;
        for &v in &tr.costs {
            assert!(v <= prev * (1.0 + 1e-9));
            prev = v;
        }
    }
}

#[test]
fn huge_anchor_weight_pins_layers_to_the_denoiser() {
    let (proj, cases) = setup(2, 70);
    let mut cfg = small_config(2);
    cfg.mode = SuperMode::SupervisedRegOnly;
    cfg.mu = 1e16;
    let t = super_train(&cases, &[], &cfg, &proj, None).unwrap();
    let c = &cases[0];
    let r = super_reconstruct(&c.y, &c.weights, &c.x0, &t.model, &proj).unwrap();
    let mut x = c.x0.clone();
    for (theta, out) in t.model.layers.iter().zip(&r.layers) {
        x = apply(theta, &x).unwrap();
        x.quantize_f32();
        assert!(rmse(out, &x).unwrap() < 1e-3);
        x = out.clone();
    }
    let res = evaluate_fixed_point_residual(&c.y, &c.weights, &t.model, &proj, &r.image).unwrap();
    let d = apply(t.model.layers.last().unwrap(), &r.image).unwrap();
    assert!((res - rmse(&d, &r.image).unwrap()).abs() < 1e-3);
    let again = evaluate_fixed_point_residual(&c.y, &c.weights, &t.model, &proj, &r.image).unwrap();
    assert_eq!(res, again);
}

#[test]
fn model_directory_round_trip() {
    let (proj, cases) = setup(2, 80);
    let (cfg, bank) = ultra_config(2);
    let t = super_train(&cases, &[], &cfg, &proj, Some(&bank)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.model.save(dir.path()).unwrap();
    assert!(dir.path().join(layer_file_name(0)).exists());
    assert!(dir.path().join(layer_file_name(1)).exists());
    let back = LayeredSuperModel::load(dir.path()).unwrap();
    assert_eq!(back, t.model);
    assert_eq!(back.model_hash(), t.model.model_hash());

    // A swapped layer file is caught by the recorded hash.
    std::fs::copy(
        dir.path().join(layer_file_name(0)),
        dir.path().join(layer_file_name(1)),
    )
    .unwrap();
    assert!(matches!(
        LayeredSuperModel::load(dir.path()),
        Err(Error::Format { .. })
    ));
}

#[test]
fn invalid_inputs_are_rejected() {
    let (proj, cases) = setup(1, 90);
    let (cfg, _) = ultra_config(1);
    assert!(super_train(&cases, &[], &cfg, &proj, None).is_err());
    assert!(super_train(&[], &[], &small_config(1), &proj, None).is_err());

    let t = super_train(&cases, &[], &small_config(1), &proj, None).unwrap();
    let other =
        FanBeamProjector::new(&FanBeamGeometry::desk_for(N, 2 * N, 2 * N + 1).unwrap()).unwrap();
    let c = &cases[0];
    assert!(matches!(
        super_reconstruct(&c.y, &c.weights, &c.x0, &t.model, &other),
        Err(Error::Model(_))
    ));
    let mut bad = t.model.clone();
    bad.layers.pop();
    assert!(super_reconstruct(&c.y, &c.weights, &c.x0, &bad, &proj).is_err());
}
