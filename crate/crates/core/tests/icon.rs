mod common;

use common::*;
use mmreg::autodiff::Dims;
use mmreg::icon::{gradicon_reg, randomized_loss, total_loss, LossConfig};
use mmreg::pipeline::{Direction, PyramidModel};
use mmreg::similarity::{loss_similarity, SimilarityConfig, SimilarityKind};
use mmreg::synthetic::{make_deformation, make_phantom, render_pair, ModalityRemap};
use mmreg::transforms::DisplacementField;
use proptest::prelude::*;

/// A model whose every stage holds small random displacements.
fn perturbed_model(base: Dims, seed: u64) -> PyramidModel {
    let mut m = PyramidModel::build(base).unwrap();
    for (k, dir) in [Direction::AtoB, Direction::BtoA].into_iter().enumerate() {
        let dims = m.stage_dims();
        for (s, stage) in m.stages_mut(dir).iter_mut().enumerate() {
            *stage = random_tensor(seed + 10 * k as u64 + s as u64, dims[s], 3, -0.02, 0.02);
        }
    }
    m
}

fn swapped(m: &PyramidModel) -> PyramidModel {
    let mut out = m.clone();
    *out.stages_mut(Direction::AtoB) = m.stages(Direction::BtoA).clone();
    *out.stages_mut(Direction::BtoA) = m.stages(Direction::AtoB).clone();
    out
}

fn lambda(l: f64) -> LossConfig {
    LossConfig {
        lambda: l,
        ..LossConfig::default()
    }
}

#[test]
fn inverse_translations_have_no_penalty() {
    let d = Dims::cube(7);
    for t in [[0.05, -0.1, 0.02], [0.0, 0.3, -0.2]] {
        let fwd = DisplacementField::constant(d, t).unwrap();
        let back = DisplacementField::constant(d, t.map(|v| -v)).unwrap();
        assert!(gradicon_reg(&fwd, &back).unwrap().abs() <= 1e-12);
    }
}

#[test]
fn aligned_pair_with_fresh_model() {
    let d = Dims::cube(8);
    let a = smooth_volume(1, d);
    let t = total_loss(&a, &a, &PyramidModel::build(d).unwrap(), &LossConfig::default()).unwrap();
    assert!(t.sim_ab < 4e-3 && t.sim_ba < 4e-3);
    assert_eq!(t.reg, 0.0);
}

#[test]
fn unweighted_regularizer_leaves_similarities() {
    let d = Dims::cube(8);
    let (a, b) = (smooth_volume(2, d), random_volume(3, d));
    let t = total_loss(&a, &b, &perturbed_model(d, 4), &lambda(0.0)).unwrap();
    assert!(t.reg > 0.0);
    assert!((t.total - (t.sim_ab + t.sim_ba)).abs() <= 1e-12);
}

#[test]
fn terms_assemble_from_independent_similarities() {
    let d = Dims::cube(16);
    let phantom = make_phantom(5, d, 2).unwrap();
    let psi = make_deformation(6, d, 1.5, 1).unwrap();
    let (a, b, _) = render_pair(&phantom, &ModalityRemap::Identity, &ModalityRemap::Invert, &psi).unwrap();
    let cfg = LossConfig::default();
    let t = total_loss(&a, &b, &PyramidModel::build(d).unwrap(), &cfg).unwrap();
    let sim = SimilarityConfig::of(SimilarityKind::Lncc2);
    let want = loss_similarity(&a, &b, &sim).unwrap() + loss_similarity(&b, &a, &sim).unwrap();
    assert!((t.total - want).abs() <= 1e-12);
}

#[test]
fn randomized_loss_with_input_pair_is_total_loss() {
    let d = Dims::cube(8);
    for seed in 0..3 {
        let (a, b) = (smooth_volume(seed, d), smooth_volume(seed + 50, d));
        let m = perturbed_model(d, seed);
        let cfg = LossConfig::default();
        let r = randomized_loss(&a, &b, &a, &b, &m, &cfg).unwrap();
        let t = total_loss(&a, &b, &m, &cfg).unwrap();
        assert!((r.total - t.total).abs() <= 1e-12);
    }
}

#[test]
fn aligned_loss_pair_with_fresh_model() {
    let d = Dims::cube(8);
    let (ia, ib) = (smooth_volume(7, d), random_volume(8, d));
    let la = smooth_volume(9, d);
    let lb = la.map(|x| 1.0 - x).unwrap();
    let r = randomized_loss(&ia, &ib, &la, &lb, &PyramidModel::build(d).unwrap(), &LossConfig::default()).unwrap();
    assert!(r.sim_ab < 4e-3 && r.sim_ba < 4e-3);
    assert_eq!(r.reg, 0.0);
}

#[test]
fn maps_depend_on_the_input_pair_only() {
    let d = Dims::cube(8);
    let (ia, ib) = (smooth_volume(10, d), smooth_volume(11, d));
    let (la, lb) = (random_volume(12, d), random_volume(13, d));
    let m = perturbed_model(d, 14);
    let cfg = LossConfig::default();
    let one = randomized_loss(&ia, &ib, &la, &lb, &m, &cfg).unwrap();
    let two = randomized_loss(&ia, &ib, &lb, &la, &m, &cfg).unwrap();
    assert!(one.reg > 0.0);
    assert_eq!(one.reg.to_bits(), two.reg.to_bits());
    assert_ne!(one.sim_ab, two.sim_ab);
}

#[test]
fn exchanging_images_and_parameter_sets() {
    let d = Dims::cube(8);
    let (a, b) = (smooth_volume(20, d), random_volume(21, d));
    let m = perturbed_model(d, 22);
    let s = swapped(&m);

    // similarity terms trade places exactly
    let fwd = total_loss(&a, &b, &m, &lambda(1.5)).unwrap();
    let rev = total_loss(&b, &a, &s, &lambda(1.5)).unwrap();
    assert!((fwd.sim_ab - rev.sim_ba).abs() <= 1e-12);
    assert!((fwd.sim_ba - rev.sim_ab).abs() <= 1e-12);
    let f0 = total_loss(&a, &b, &m, &lambda(0.0)).unwrap();
    let r0 = total_loss(&b, &a, &s, &lambda(0.0)).unwrap();
    assert!((f0.total - r0.total).abs() <= 1e-12);

    // from a fresh model the whole objective is symmetric
    let fresh = PyramidModel::build(d).unwrap();
    let x = total_loss(&a, &b, &fresh, &lambda(1.5)).unwrap();
    let y = total_loss(&b, &a, &fresh, &lambda(1.5)).unwrap();
    assert!((x.total - y.total).abs() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn total_loss_grows_with_lambda(seed in 0u64..1000, l1 in 0.0f64..5.0, dl in 0.0f64..5.0) {
        let d = Dims::cube(8);
        let (a, b) = (smooth_volume(seed, d), random_volume(seed + 1, d));
        let m = perturbed_model(d, seed + 2);
        let lo = total_loss(&a, &b, &m, &lambda(l1)).unwrap().total;
        let hi = total_loss(&a, &b, &m, &lambda(l1 + dl)).unwrap().total;
        prop_assert!(hi >= lo);
    }
}
