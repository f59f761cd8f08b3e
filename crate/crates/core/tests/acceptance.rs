//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use mmreg::autodiff::{grad_check, Dims, Tape, Tensor3, Var};
use mmreg::icon::{gradicon_reg, randomized_loss, tape_gradicon_reg, tape_randomized_loss, tape_total_loss, total_loss, LossConfig};
use mmreg::metrics::{mtre, MtreDirection};
use mmreg::pipeline::{instance_optimize, Direction, ModelVars, OptimizerConfig, PyramidModel, RegistrationResult};
use mmreg::sampling::{build_plan, configured_weights, epoch_plan, erratum_guard, PairPlan, SamplingStrategy, Verdict, WeightMode};
use mmreg::similarity::{lncc_map, loss_similarity, mind_ssc_descriptor, tape_similarity, SimilarityConfig, SimilarityKind};
use mmreg::synthetic::ModalityRemap;
use mmreg::transforms::{compose, jacobian_det_map, percent_neg_jac, tape_warp, warp, DisplacementField};
use mmreg::volume::{nifti, raw, read_landmarks_csv, read_nifti, write_landmarks_csv, write_nifti, LandmarkSet, Modality, Volume};
use mmreg::Result;
use rand::Rng;

type Outcome = Result<(bool, String)>;

const A1_TOL: f64 = 1e-3;
const A1_BUDGET_S: f64 = 60.0;
const ORACLE_TOL: f64 = 1e-10;
const A3_LNCC2_MAX: f64 = 0.5;
const A3_LNCC_MIN: f64 = 0.9;
const A3_BUDGET_S: f64 = 600.0;
const A4_MTRE_MAX: f64 = 0.3;
const A4_FOLD_MAX: f64 = 0.5;
const A5_TOL: f64 = 1e-12;
const A6_FREQ_TOL: f64 = 0.5;
const A7_RATIO_MAX: f64 = 0.1;
const A8_TOL: f64 = 1e-7;
const STEPS: usize = 200;
/// Small against the distance from any sample point to a trilinear cell face.
const FD_STEP: f64 = 1e-5;

/// Stages holding small seeded displacements, so every map is non-trivial.
fn perturbed_model(base: Dims, seed: u64) -> PyramidModel {
    let mut m = PyramidModel::build(base).unwrap();
    let dims = m.stage_dims();
    for (k, dir) in [Direction::AtoB, Direction::BtoA].into_iter().enumerate() {
        for (s, stage) in m.stages_mut(dir).iter_mut().enumerate() {
            *stage = random_tensor(seed + 10 * k as u64 + s as u64, dims[s], 3, -0.02, 0.02);
        }
    }
    m
}

/// Model handles with stage `stage` of `dir` replaced by `x` and the rest constant.
fn model_vars(tape: &mut Tape, m: &PyramidModel, x: Var, dir: Direction, stage: usize) -> ModelVars {
    let mut v = ModelVars {
        ab: m.stages(Direction::AtoB).clone().map(|t| tape.constant(t)),
        ba: m.stages(Direction::BtoA).clone().map(|t| tape.constant(t)),
    };
    match dir {
        Direction::AtoB => v.ab[stage] = x,
        Direction::BtoA => v.ba[stage] = x,
    }
    v
}

fn a1() -> Outcome {
    let start = Instant::now();
    let d = Dims::cube(8);
    let a = smooth_volume(101, d).into_grid();
    let b = random_tensor(102, d, 1, 0.0, 1.0);
    let u0 = off_grid_displacement(103, d);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();

    for (name, kind) in [
        ("1-LNCC", SimilarityKind::Lncc),
        ("1-LNCC^2", SimilarityKind::Lncc2),
        ("MIND-SSC", SimilarityKind::MindSsc),
    ] {
        let (a, b) = (a.clone(), b.clone());
        let f = move |tape: &mut Tape, u: Var| {
            let ia = tape.constant(a.clone());
            let ib = tape.constant(b.clone());
            let w = tape_warp(tape, ia, u)?;
            tape_similarity(tape, w, ib, &SimilarityConfig::of(kind))
        };
        worst.insert(name, grad_check(f, &u0, FD_STEP)?);
    }

    let u_ba = off_grid_displacement(104, d);
    let reg = move |tape: &mut Tape, u: Var| {
        let v = tape.constant(u_ba.clone());
        tape_gradicon_reg(tape, u, v)
    };
    worst.insert("gradicon_reg", grad_check(reg, &off_grid_displacement(105, d), FD_STEP)?);

    let m = perturbed_model(d, 106);
    let cfg = LossConfig::default();
    let la = random_tensor(107, d, 1, 0.0, 1.0);
    let lb = smooth_volume(108, d).into_grid().map(|x| 1.0 - x);
    let mut total_err = 0.0_f64;
    let mut randomized_err = 0.0_f64;
    for (dir, stage) in [(Direction::AtoB, 0), (Direction::AtoB, 3), (Direction::BtoA, 1)] {
        let x0 = m.stages(dir)[stage].clone();
        let (ta, tb, mt, c) = (a.clone(), b.clone(), m.clone(), cfg);
        let total = move |tape: &mut Tape, x: Var| {
            let vars = model_vars(tape, &mt, x, dir, stage);
            let ia = tape.constant(ta.clone());
            let ib = tape.constant(tb.clone());
            Ok(tape_total_loss(tape, ia, ib, &vars, &c)?.total)
        };
        total_err = total_err.max(grad_check(total, &x0, FD_STEP)?);

        let (ta, tb, tla, tlb, mt, c) = (a.clone(), b.clone(), la.clone(), lb.clone(), m.clone(), cfg);
        let randomized = move |tape: &mut Tape, x: Var| {
            let vars = model_vars(tape, &mt, x, dir, stage);
            let [ia, ib, ja, jb] = [&ta, &tb, &tla, &tlb].map(|t| tape.constant(t.clone()));
            Ok(tape_randomized_loss(tape, (ia, ib), (ja, jb), &vars, &c)?.total)
        };
        randomized_err = randomized_err.max(grad_check(randomized, &x0, FD_STEP)?);
    }
    worst.insert("total_loss", total_err);
    worst.insert("randomized_loss", randomized_err);

    let secs = start.elapsed().as_secs_f64();
    let max = worst.values().copied().fold(0.0, f64::max);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.2e}")).collect::<Vec<_>>().join(", ");
    Ok((max < A1_TOL && secs < A1_BUDGET_S, format!("{detail}; {secs:.1} s")))
}

fn a2() -> Outcome {
    let d = Dims::cube(8);
    let (a, b) = (smooth_volume(201, d), random_volume(202, d));
    let mut lncc = 0.0_f64;
    for r in [1, 2] {
        let cfg = SimilarityConfig {
            window_radius: r,
            ..SimilarityConfig::default()
        };
        let got = lncc_map(&a, &b, &cfg)?;
        lncc = lncc.max(max_abs_diff(got.data(), &brute_lncc(a.data(), b.data(), d, r, cfg.eps)));
    }

    let phi1 = smooth_field(d, 203, 0.08);
    let phi2 = smooth_field(d, 204, 0.08);
    let got = compose(&phi1, &phi2)?;
    let want = brute_compose(phi1.u(), phi2.u());
    let comp = max_abs_diff(&field_vectors(got.u()).concat(), &want.concat());

    let mut counts = Vec::new();
    for seed in 0..4 {
        let u = random_tensor(205 + seed, Dims::cube(7), 3, -0.15, 0.15);
        let want = brute_negative_jacobians(&u);
        let got = jacobian_det_map(&DisplacementField::new(u)?)?.data().iter().filter(|&&v| v < 0.0).count();
        counts.push((got, want));
    }
    let folds_equal = counts.iter().all(|(g, w)| g == w) && counts.iter().any(|(_, w)| *w > 0);

    let d9 = Dims::cube(9);
    let m = random_volume(209, d9);
    let cfg = SimilarityConfig::of(SimilarityKind::MindSsc);
    let desc = mind_ssc_descriptor(&m, &cfg)?;
    let want = brute_mind(m.data(), d9, cfg.mind_patch_radius, cfg.eps);
    let mind = (0..12).map(|k| max_abs_diff(desc.channel(k), &want[k])).fold(0.0, f64::max);

    let pass = lncc <= ORACLE_TOL && comp <= ORACLE_TOL && folds_equal && mind <= ORACLE_TOL;
    Ok((
        pass,
        format!("lncc {lncc:.1e}, compose {comp:.1e}, negative |J| (got, oracle) {counts:?}, mind {mind:.1e}"),
    ))
}

struct Run {
    result: RegistrationResult,
    mtre: f64,
    identity: f64,
    secs: f64,
}

fn register(case: &PhantomCase, kind: SimilarityKind, lambda: f64) -> Result<Run> {
    let start = Instant::now();
    let loss = LossConfig {
        lambda,
        similarity: SimilarityConfig::of(kind),
    };
    let opt = OptimizerConfig {
        steps: STEPS,
        ..OptimizerConfig::default()
    };
    let result = instance_optimize(&case.a, &case.b, &loss, &opt)?;
    let g = case.a.geometry();
    let t = &case.truth;
    let dir = MtreDirection::TargetToSource;
    let mtre_v = mtre(&t.source_landmarks, &t.target_landmarks, &result.phi_ab, &g, dir)?;
    let id = DisplacementField::identity(case.a.dims());
    let identity = mtre(&t.source_landmarks, &t.target_landmarks, &id, &g, dir)?;
    Ok(Run {
        result,
        mtre: mtre_v,
        identity,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn a3(inverted: &PhantomCase) -> Outcome {
    let sq = register(inverted, SimilarityKind::Lncc2, 1.5)?;
    let plain = register(inverted, SimilarityKind::Lncc, 1.5)?;
    let (r2, r1) = (sq.mtre / sq.identity, plain.mtre / plain.identity);
    let secs = sq.secs + plain.secs;
    Ok((
        r2 <= A3_LNCC2_MAX && r1 >= A3_LNCC_MIN && secs < A3_BUDGET_S,
        format!(
            "identity mTRE {:.3} mm; 1-LNCC^2 {:.3} mm ({:.1}%); 1-LNCC {:.3} mm ({:.1}%); {secs:.1} s",
            sq.identity,
            sq.mtre,
            100.0 * r2,
            plain.mtre,
            100.0 * r1
        ),
    ))
}

fn a4(run: &Run) -> Outcome {
    let ratio = run.mtre / run.identity;
    let fold_ab = percent_neg_jac(&run.result.phi_ab)?;
    let fold_ba = percent_neg_jac(&run.result.phi_ba)?;
    Ok((
        ratio <= A4_MTRE_MAX && fold_ab <= A4_FOLD_MAX && fold_ba <= A4_FOLD_MAX,
        format!(
            "mTRE {:.3} mm vs identity {:.3} mm ({:.1}%); %|J|<0 {fold_ab:.3} / {fold_ba:.3}; {:.1} s",
            run.mtre,
            run.identity,
            100.0 * ratio,
            run.secs
        ),
    ))
}

fn a5() -> Outcome {
    let d = Dims::cube(8);
    let cfg = LossConfig::default();
    let sim = &cfg.similarity;
    let mut worst = 0.0_f64;
    for seed in 0..10 {
        let (a, b) = (smooth_volume(500 + seed, d), random_volume(600 + seed, d));
        let m = perturbed_model(d, 700 + seed);
        let r = randomized_loss(&a, &b, &a, &b, &m, &cfg)?;
        let t = total_loss(&a, &b, &m, &cfg)?;
        // both against the objective assembled from the maps
        let (ab, ba) = (m.evaluate(&a, &b, Direction::AtoB)?, m.evaluate(&a, &b, Direction::BtoA)?);
        let direct = loss_similarity(&warp(&a, &ab)?, &b, sim)?
            + loss_similarity(&warp(&b, &ba)?, &a, sim)?
            + cfg.lambda * gradicon_reg(&ab, &ba)?;
        worst = worst.max((r.total - t.total).abs()).max((t.total - direct).abs());
    }
    Ok((worst <= A5_TOL, format!("max |randomized - total| and |total - assembled| {worst:.1e} over 10 cases")))
}

fn aliased(plans: &[PairPlan]) -> Vec<PairPlan> {
    plans
        .iter()
        .map(|p| PairPlan {
            loss_a: p.input_a.clone(),
            loss_b: p.input_b.clone(),
            ..p.clone()
        })
        .collect()
}

fn a6() -> Outcome {
    let m = training_mix();
    let w = configured_weights(&m, WeightMode::Training)?;
    let n = 100_000;
    let plans = epoch_plan(&m, &w, SamplingStrategy::F, n, 6)?;
    let mut freq_err = 0.0_f64;
    for ds in &m {
        let got = 100.0 * plans.iter().filter(|p| p.dataset == ds.name).count() as f64 / n as f64;
        freq_err = freq_err.max((got - ds.training_weight).abs());
    }

    let mut all_on = m.clone();
    for ds in &mut all_on {
        ds.label_randomization = true;
    }
    let f = build_plan(&all_on, SamplingStrategy::F, 10_000, 7)?;
    let shared = f.iter().filter(|p| p.strategy == SamplingStrategy::F && p.loss_a == p.loss_b).count();
    let r = build_plan(&all_on, SamplingStrategy::R, 10_000, 8)?;
    let gf = erratum_guard(&f, SamplingStrategy::F);
    let gr = erratum_guard(&r, SamplingStrategy::R);
    let gx = erratum_guard(&aliased(&f), SamplingStrategy::F);
    let pass = freq_err <= A6_FREQ_TOL
        && shared == f.len()
        && gf.verdict == Verdict::Pass
        && gr.verdict == Verdict::Pass
        && gx.verdict == Verdict::Fail;
    Ok((
        pass,
        format!(
            "max frequency error {freq_err:.3} pts; F invariant {shared}/{}; guard F {:?}, R {:?}, aliased {:?}",
            f.len(),
            gf.verdict,
            gr.verdict,
            gx.verdict
        ),
    ))
}

fn a7(with_reg: &Run, case: &PhantomCase) -> Outcome {
    let without = register(case, SimilarityKind::Lncc2, 0.0)?;
    let reg = |r: &Run| gradicon_reg(&r.result.phi_ab, &r.result.phi_ba);
    let (on, off) = (reg(with_reg)?, reg(&without)?);
    Ok((
        on <= A7_RATIO_MAX * off,
        format!("gradicon_reg {on:.3e} at lambda 1.5, {off:.3e} at lambda 0 ({:.3}%)", 100.0 * on / off),
    ))
}

fn a8() -> Outcome {
    let dir = tempfile::tempdir()?;
    let d = Dims::new(7, 6, 5);
    let mut r = rng(800);
    let data: Vec<f32> = (0..d.voxels()).map(|_| r.random_range(-1e3f32..1e3)).collect();
    let bytes = nifti::encode_f32(d, [0.8, 1.1, 2.5], [-3.0, 4.0, 10.5], "acceptance", &data);
    let first = dir.path().join("a.nii");
    std::fs::write(&first, &bytes)?;
    let v = read_nifti(&first)?;
    let bits_equal = v.data().iter().zip(&data).all(|(x, y)| (*x as f32).to_bits() == y.to_bits());
    let second = dir.path().join("b.nii");
    write_nifti(&v, &second)?;
    let again = read_nifti(&second)?;
    let third = dir.path().join("c.nii");
    write_nifti(&again, &third)?;
    let nifti_ok = bits_equal
        && again.data() == v.data()
        && (again.spacing, again.origin) == (v.spacing, v.origin)
        && std::fs::read(&third)? == std::fs::read(&second)?;

    let pts: Vec<[f64; 3]> = (0..20).map(|_| std::array::from_fn(|_| r.random_range(-50.0..50.0))).collect();
    let set = LandmarkSet::new(pts, "source");
    let csv = dir.path().join("l.csv");
    write_landmarks_csv(&set, &csv)?;
    let back = read_landmarks_csv(&csv, "source")?;
    let lm = max_abs_diff(&back.points.concat(), &set.points.concat());

    let field = smooth_field(Dims::new(6, 7, 8), 801, 0.1);
    let side = dir.path().join("f.meta");
    raw::write_field(&field, &side)?;
    let fe = max_abs_diff(raw::read_field(&side)?.u().data(), field.u().data());

    Ok((
        nifti_ok && back.len() == set.len() && lm <= A8_TOL && fe <= A8_TOL,
        format!("NIfTI bit-exact {nifti_ok}; landmarks {lm:.1e}; field {fe:.1e}"),
    ))
}

/// Median of `x` and the window ends.
fn window(x: f64) -> f64 {
    let mut v = [-1000.0, x, 1000.0];
    v.sort_by(f64::total_cmp);
    v[1]
}

fn a9() -> Outcome {
    let d = Dims::cube(10);
    let mut r = rng(900);
    let ct: Vec<f64> = (0..1000).map(|_| r.random_range(-2000.0..2000.0)).collect();
    let v = Volume::from_grid(Tensor3::new(d, 1, ct.clone())?, Modality::Ct)?;
    let got = mmreg::volume::preprocess(&v)?;
    let want_ct: Vec<f64> = ct.iter().map(|&x| (window(x) + 1000.0) / 2000.0).collect();
    let ct_ok = got.data().iter().zip(&want_ct).all(|(a, b)| a.to_bits() == b.to_bits());

    let mr: Vec<f64> = (0..1000).map(|_| r.random_range(0.0..3000.0)).collect();
    let v = Volume::from_grid(Tensor3::new(d, 1, mr.clone())?, Modality::T1w)?;
    let got = mmreg::volume::preprocess(&v)?;
    let p = sorted_percentile(&mr, 0.99);
    let want_mr: Vec<f64> = mr.iter().map(|&x| if x > p { 1.0 } else { x / p }).collect();
    let mr_ok = got.data().iter().zip(&want_mr).all(|(a, b)| a.to_bits() == b.to_bits());
    let top = got.data().iter().filter(|&&x| x == 1.0).count();

    Ok((ct_ok && mr_ok, format!("CT exact {ct_ok}; MR exact {mr_ok} (p99 {p:.3}, {top} voxels at 1)")))
}

fn report(name: &str, outcome: Outcome, failed: &mut usize) {
    match outcome {
        Ok((true, detail)) => println!("{name} PASS  {detail}"),
        Ok((false, detail)) => {
            *failed += 1;
            println!("{name} FAIL  {detail}");
        }
        Err(e) => {
            *failed += 1;
            println!("{name} FAIL  error: {e}");
        }
    }
}

fn main() -> ExitCode {
    let mut failed = 0;
    report("A1", a1(), &mut failed);
    report("A2", a2(), &mut failed);
    let inverted = phantom_case(ModalityRemap::Invert);
    report("A3", a3(&inverted), &mut failed);
    let same = phantom_case(ModalityRemap::Identity);
    match register(&same, SimilarityKind::Lncc2, 1.5) {
        Ok(run) => {
            report("A4", a4(&run), &mut failed);
            report("A5", a5(), &mut failed);
            report("A6", a6(), &mut failed);
            report("A7", a7(&run, &same), &mut failed);
        }
        Err(e) => {
            report("A4", Err(e), &mut failed);
            report("A5", a5(), &mut failed);
            report("A6", a6(), &mut failed);
            println!("A7 FAIL  no A4 run to compare against");
            failed += 1;
        }
    }
    report("A8", a8(), &mut failed);
    report("A9", a9(), &mut failed);
    if failed == 0 {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
