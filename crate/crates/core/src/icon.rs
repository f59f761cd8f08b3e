//! Symmetric registration objectives with the gradient inverse consistency penalty.
//!
//! With `Phi_ab = Phi[A, B]` and `Phi_ba = Phi[B, A]`:
//!
//! ```text
//! L = sim(A_L ∘ Phi_ab, B_L) + sim(B_L ∘ Phi_ba, A_L) + lambda * mean |∇(Phi_ab ∘ Phi_ba) - I|_F^2
//! ```
//!
//! where the maps are predicted from the input pair `(A, B)` and the similarity
//! is measured on the loss pair `(A_L, B_L)`. With `A_L = A` and `B_L = B` this
//! is the plain symmetric objective.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::pipeline::{Direction, ModelVars, PyramidModel};
use crate::similarity::{tape_similarity, SimilarityConfig};
use crate::transforms::{tape_compose, DisplacementField};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub similarity: SimilarityConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.5,
            similarity: SimilarityConfig::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        self.similarity.validate()
    }
}

/// `mean over interior voxels of |∇(u_ab ∘ u_ba)|_F^2`, i.e. the squared
/// deviation of the composed map's Jacobian from the identity.
pub fn tape_gradicon_reg(tape: &mut Tape, u_ab: Var, u_ba: Var) -> Result<Var> {
    for u in [u_ab, u_ba] {
        if tape.dims(u).min_extent() < 3 {
            return Err(Error::dims("gradicon_reg", "grid of at least 3^3", tape.dims(u)));
        }
    }
    let composed = tape_compose(tape, u_ab, u_ba)?;
    let grad = tape.spatial_gradient(composed)?;
    let interior = tape.crop(grad, 1)?;
    let sq = tape.square(interior)?;
    let m = tape.mean(sq)?;
    // mean runs over 9 Jacobian entries per voxel
    tape.scale(m, 9.0)
}

pub fn gradicon_reg(phi_ab: &DisplacementField, phi_ba: &DisplacementField) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(phi_ab.u().clone());
    let b = tape.constant(phi_ba.u().clone());
    let r = tape_gradicon_reg(&mut tape, a, b)?;
    Ok(tape.value(r).item())
}

/// Tape handles of the assembled objective.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub sim_ab: Var,
    pub sim_ba: Var,
    pub reg: Var,
    pub u_ab: Var,
    pub u_ba: Var,
}

/// Values of the objective's terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub sim_ab: f64,
    pub sim_ba: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn read(tape: &Tape, v: &LossVars) -> LossTerms {
        LossTerms {
            sim_ab: tape.value(v.sim_ab).item(),
            sim_ba: tape.value(v.sim_ba).item(),
            reg: tape.value(v.reg).item(),
            total: tape.value(v.total).item(),
        }
    }
}

/// Randomized objective on the tape. Maps depend on `input_*` only.
pub fn tape_randomized_loss(
    tape: &mut Tape,
    input: (Var, Var),
    loss: (Var, Var),
    model: &ModelVars,
    cfg: &LossConfig,
) -> Result<LossVars> {
    let (ia, ib) = input;
    let (la, lb) = loss;
    let dims = tape.dims(ia);
    for v in [ib, la, lb] {
        if tape.dims(v) != dims {
            return Err(Error::dims("randomized_loss", dims, tape.dims(v)));
        }
    }
    let u_ab = PyramidModel::tape_map(tape, model.stages(Direction::AtoB), ia, ib)?;
    let u_ba = PyramidModel::tape_map(tape, model.stages(Direction::BtoA), ib, ia)?;

    let wa = crate::transforms::tape_warp(tape, la, u_ab)?;
    let sim_ab = tape_similarity(tape, wa, lb, &cfg.similarity)?;
    let wb = crate::transforms::tape_warp(tape, lb, u_ba)?;
    let sim_ba = tape_similarity(tape, wb, la, &cfg.similarity)?;
    let reg = tape_gradicon_reg(tape, u_ab, u_ba)?;

    let sims = tape.add(sim_ab, sim_ba)?;
    let weighted = tape.scale(reg, cfg.lambda)?;
    let total = tape.add(sims, weighted)?;
    Ok(LossVars {
        total,
        sim_ab,
        sim_ba,
        reg,
        u_ab,
        u_ba,
    })
}

pub fn tape_total_loss(
    tape: &mut Tape,
    a: Var,
    b: Var,
    model: &ModelVars,
    cfg: &LossConfig,
) -> Result<LossVars> {
    tape_randomized_loss(tape, (a, b), (a, b), model, cfg)
}

fn check_model(model: &PyramidModel, vols: &[&Volume]) -> Result<()> {
    for v in vols {
        if v.dims() != model.base() {
            return Err(Error::dims("loss", model.base(), v.dims()));
        }
    }
    Ok(())
}

pub fn randomized_loss(
    input_a: &Volume,
    input_b: &Volume,
    loss_a: &Volume,
    loss_b: &Volume,
    model: &PyramidModel,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    cfg.validate()?;
    check_model(model, &[input_a, input_b, loss_a, loss_b])?;
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let [ia, ib, la, lb] =
        [input_a, input_b, loss_a, loss_b].map(|v| tape.constant(v.grid().clone()));
    let lv = tape_randomized_loss(&mut tape, (ia, ib), (la, lb), &vars, cfg)?;
    Ok(LossTerms::read(&tape, &lv))
}

pub fn total_loss(
    ia: &Volume,
    ib: &Volume,
    model: &PyramidModel,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    randomized_loss(ia, ib, ia, ib, model, cfg)
}
