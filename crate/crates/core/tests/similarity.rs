mod common;

use common::*;
use mmreg::autodiff::Dims;
use mmreg::similarity::{lncc_map, loss_similarity, mind_ssc_descriptor, SimilarityConfig, SimilarityKind};
use mmreg::volume::Volume;
use proptest::prelude::*;

fn cfg(kind: SimilarityKind) -> SimilarityConfig {
    SimilarityConfig::of(kind)
}

fn affine(v: &Volume, alpha: f64, beta: f64) -> Volume {
    v.map(|x| alpha * x + beta).unwrap()
}

/// Values of `t` at voxels at least `m` from every face.
fn interior(t: &mmreg::autodiff::Tensor3, m: usize) -> Vec<f64> {
    let d = t.dims();
    let mut out = Vec::new();
    for z in m..d.nz - m {
        for y in m..d.ny - m {
            for x in m..d.nx - m {
                out.push(t.get(x, y, z, 0));
            }
        }
    }
    out
}

#[test]
fn self_and_anti_correlation() {
    let a = random_volume(1, Dims::cube(10));
    let c = cfg(SimilarityKind::Lncc);
    let own = lncc_map(&a, &a, &c).unwrap();
    assert!(interior(&own, 2).iter().all(|r| (r - 1.0).abs() < 1e-3));
    let anti = lncc_map(&a, &affine(&a, -1.0, 1.0), &c).unwrap();
    assert!(interior(&anti, 2).iter().all(|r| (r + 1.0).abs() < 1e-3));
}

#[test]
fn sign_agnostic_losses() {
    let a = random_volume(2, Dims::cube(9));
    let inv = affine(&a, -1.0, 1.0);
    assert!(loss_similarity(&a, &a, &cfg(SimilarityKind::Lncc2)).unwrap() < 2e-3);
    assert!(loss_similarity(&a, &inv, &cfg(SimilarityKind::Lncc2)).unwrap() < 2e-3);
    assert!((loss_similarity(&a, &inv, &cfg(SimilarityKind::Lncc)).unwrap() - 2.0).abs() < 2e-3);
    assert_eq!(loss_similarity(&a, &a, &cfg(SimilarityKind::Mse)).unwrap(), 0.0);
}

#[test]
fn squared_lncc_tolerates_intensity_affine_maps() {
    let a = random_volume(3, Dims::cube(9));
    for alpha in [2.0, -1.0, -0.5] {
        for beta in [0.0, 0.3] {
            let b = affine(&a, alpha, beta);
            let l2 = loss_similarity(&a, &b, &cfg(SimilarityKind::Lncc2)).unwrap();
            assert!(l2 < 2e-3, "alpha {alpha} beta {beta}: {l2}");
            let l1 = loss_similarity(&a, &b, &cfg(SimilarityKind::Lncc)).unwrap();
            if alpha < 0.0 {
                assert!((l1 - 2.0).abs() < 5e-3, "alpha {alpha}: {l1}");
            } else {
                assert!(l1 < 2e-3);
            }
        }
    }
}

#[test]
fn mind_descriptor_ignores_intensity_affine_maps() {
    let a = random_volume(4, Dims::cube(9));
    let c = cfg(SimilarityKind::MindSsc);
    let da = mind_ssc_descriptor(&a, &c).unwrap();
    let db = mind_ssc_descriptor(&affine(&a, 2.0, 0.1), &c).unwrap();
    assert!(max_abs_diff(da.data(), db.data()) < 1e-2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn squared_lncc_is_symmetric(seed in 0u64..10_000, smooth in any::<bool>()) {
        let d = Dims::new(7, 8, 6);
        let a = if smooth { smooth_volume(seed, d) } else { random_volume(seed, d) };
        let b = random_volume(seed + 1, d);
        let c = cfg(SimilarityKind::Lncc2);
        let ab = loss_similarity(&a, &b, &c).unwrap();
        let ba = loss_similarity(&b, &a, &c).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn losses_are_non_negative(seed in 0u64..10_000) {
        let d = Dims::cube(8);
        let a = random_volume(seed, d);
        let b = smooth_volume(seed + 3, d);
        for kind in [SimilarityKind::Lncc2, SimilarityKind::Mse, SimilarityKind::MindSsc] {
            prop_assert!(loss_similarity(&a, &b, &cfg(kind)).unwrap() >= 0.0);
        }
        let l = loss_similarity(&a, &b, &cfg(SimilarityKind::Lncc)).unwrap();
        prop_assert!((-1e-9..=2.0 + 1e-9).contains(&l));
    }
}
