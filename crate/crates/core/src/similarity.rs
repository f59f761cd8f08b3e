//! Differentiable image similarity losses.
//!
//! Windowed statistics use a separable box mean that is count-normalized at the
//! borders, so every voxel's window average covers only in-bounds voxels.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor3, Var};
use crate::error::{Error, Result};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimilarityKind {
    #[serde(rename = "LNCC")]
    Lncc,
    #[serde(rename = "LNCC2")]
    Lncc2,
    #[serde(rename = "MIND_SSC")]
    MindSsc,
    #[serde(rename = "MSE")]
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub kind: SimilarityKind,
    /// Half-width of the LNCC box window (2 gives a 5^3 window).
    pub window_radius: usize,
    pub eps: f64,
    pub mind_patch_radius: usize,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            kind: SimilarityKind::Lncc2,
            window_radius: 2,
            eps: 1e-5,
            mind_patch_radius: 1,
        }
    }
}

impl SimilarityConfig {
    pub fn of(kind: SimilarityKind) -> Self {
        SimilarityConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_radius < 1 || self.mind_patch_radius < 1 {
            return Err(Error::invalid("similarity radii must be at least 1"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid(format!("similarity eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

fn check_pair(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (ta, tb) = (tape.value(a), tape.value(b));
    if !ta.same_shape(tb) {
        return Err(Error::dims(op, ta.shape_string(), tb.shape_string()));
    }
    Ok(())
}

/// Per-voxel `cov / sqrt((var_a + eps)(var_b + eps))` over box windows of `radius`.
pub fn tape_lncc_map(tape: &mut Tape, a: Var, b: Var, radius: usize, eps: f64) -> Result<Var> {
    check_pair(tape, "lncc", a, b)?;
    let ma = tape.box_filter(a, radius)?;
    let mb = tape.box_filter(b, radius)?;
    let aa = tape.square(a)?;
    let bb = tape.square(b)?;
    let ab = tape.mul(a, b)?;
    let maa = tape.box_filter(aa, radius)?;
    let mbb = tape.box_filter(bb, radius)?;
    let mab = tape.box_filter(ab, radius)?;

    let ma2 = tape.square(ma)?;
    let mb2 = tape.square(mb)?;
    let mamb = tape.mul(ma, mb)?;
    let var_a = tape.sub(maa, ma2)?;
    let var_b = tape.sub(mbb, mb2)?;
    let cov = tape.sub(mab, mamb)?;

    let va = tape.add_scalar(var_a, eps)?;
    let vb = tape.add_scalar(var_b, eps)?;
    let prod = tape.mul(va, vb)?;
    let denom = tape.sqrt(prod)?;
    tape.div(cov, denom)
}

pub fn lncc_map(a: &Volume, b: &Volume, cfg: &SimilarityConfig) -> Result<Tensor3> {
    if !matches!(cfg.kind, SimilarityKind::Lncc | SimilarityKind::Lncc2) {
        return Err(Error::invalid(format!("lncc_map needs an LNCC kind, got {:?}", cfg.kind)));
    }
    cfg.validate()?;
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.grid().clone()), tape.constant(b.grid().clone()));
    let rho = tape_lncc_map(&mut tape, va, vb, cfg.window_radius, cfg.eps)?;
    Ok(tape.value(rho).clone())
}

/// The 6-neighbourhood, as `+x, -x, +y, -y, +z, -z`.
pub const SIX_NEIGHBOURS: [[isize; 3]; 6] = [
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
];

/// Index pairs into [`SIX_NEIGHBOURS`] that sit `sqrt(2)` apart, in
/// lexicographic order. Descriptor channel `k` belongs to `SSC_PAIRS[k]`.
pub const SSC_PAIRS: [(usize, usize); 12] = [
    (0, 2),
    (0, 3),
    (0, 4),
    (0, 5),
    (1, 2),
    (1, 3),
    (1, 4),
    (1, 5),
    (2, 4),
    (2, 5),
    (3, 4),
    (3, 5),
];

fn check_mind_dims(tape: &Tape, x: Var, patch_radius: usize) -> Result<()> {
    let need = 2 * (patch_radius + 1) + 1;
    let d = tape.dims(x);
    if d.min_extent() < need {
        return Err(Error::dims("mind_ssc", format!("at least {need} voxels per axis"), d));
    }
    Ok(())
}

/// 12-channel self-similarity-context descriptor, `exp(-SSD_k / V)`.
pub fn tape_mind_ssc(tape: &mut Tape, x: Var, patch_radius: usize, eps: f64) -> Result<Var> {
    check_mind_dims(tape, x, patch_radius)?;
    let shifted: Vec<Var> = SIX_NEIGHBOURS
        .iter()
        .map(|&o| tape.shift(x, o))
        .collect::<Result<_>>()?;
    let mut ssd = Vec::with_capacity(SSC_PAIRS.len());
    for &(i, j) in &SSC_PAIRS {
        let d = tape.sub(shifted[i], shifted[j])?;
        let d2 = tape.square(d)?;
        ssd.push(tape.box_filter(d2, patch_radius)?);
    }
    let mut total = ssd[0];
    for &s in &ssd[1..] {
        total = tape.add(total, s)?;
    }
    let mean = tape.scale(total, 1.0 / SSC_PAIRS.len() as f64)?;
    let v = tape.clamp(mean, eps, f64::INFINITY)?;
    let channels: Vec<Var> = ssd
        .into_iter()
        .map(|s| {
            let r = tape.div(s, v)?;
            let neg = tape.scale(r, -1.0)?;
            tape.exp(neg)
        })
        .collect::<Result<_>>()?;
    tape.concat(&channels)
}

pub fn mind_ssc_descriptor(a: &Volume, cfg: &SimilarityConfig) -> Result<Tensor3> {
    cfg.validate()?;
    let mut tape = Tape::new();
    let x = tape.constant(a.grid().clone());
    let d = tape_mind_ssc(&mut tape, x, cfg.mind_patch_radius, cfg.eps)?;
    Ok(tape.value(d).clone())
}

/// Similarity loss between `a` (typically the warped source) and `b`.
pub fn tape_similarity(tape: &mut Tape, a: Var, b: Var, cfg: &SimilarityConfig) -> Result<Var> {
    check_pair(tape, "similarity", a, b)?;
    match cfg.kind {
        SimilarityKind::Lncc | SimilarityKind::Lncc2 => {
            let rho = tape_lncc_map(tape, a, b, cfg.window_radius, cfg.eps)?;
            let r = if cfg.kind == SimilarityKind::Lncc2 {
                tape.square(rho)?
            } else {
                rho
            };
            let m = tape.mean(r)?;
            tape.affine(m, -1.0, 1.0)
        }
        SimilarityKind::Mse => {
            let d = tape.sub(a, b)?;
            let d2 = tape.square(d)?;
            tape.mean(d2)
        }
        SimilarityKind::MindSsc => {
            let da = tape_mind_ssc(tape, a, cfg.mind_patch_radius, cfg.eps)?;
            let db = tape_mind_ssc(tape, b, cfg.mind_patch_radius, cfg.eps)?;
            let d = tape.sub(da, db)?;
            let d2 = tape.square(d)?;
            tape.mean(d2)
        }
    }
}

pub fn loss_similarity(a: &Volume, b: &Volume, cfg: &SimilarityConfig) -> Result<f64> {
    cfg.validate()?;
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.grid().clone()), tape.constant(b.grid().clone()));
    let l = tape_similarity(&mut tape, va, vb, cfg)?;
    Ok(tape.value(l).item())
}
