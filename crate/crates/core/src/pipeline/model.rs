use crate::autodiff::{Dims, Tape, Tensor3, Var};
use crate::error::{Error, Result};
use crate::transforms::{tape_compose, tape_resample, tape_warp, DisplacementField};
use crate::volume::Volume;

/// A map predictor on the tape: `(A, B) -> u`.
pub type Evaluator<'a> = dyn Fn(&mut Tape, Var, Var) -> Result<Var> + 'a;

/// `TS{psi1, psi2}[A, B] = psi1[A, B] ∘ psi2[A ∘ psi1[A, B], B]`.
pub fn two_step(
    tape: &mut Tape,
    psi1: &Evaluator<'_>,
    psi2: &Evaluator<'_>,
    a: Var,
    b: Var,
) -> Result<Var> {
    let first = psi1(tape, a, b)?;
    let warped = tape_warp(tape, a, first)?;
    let second = psi2(tape, warped, b)?;
    tape_compose(tape, first, second)
}

/// `DS{psi}[A, B] = psi[pool(A), pool(B)]`, resampled onto `A`'s grid.
pub fn down_sample(tape: &mut Tape, psi: &Evaluator<'_>, a: Var, b: Var) -> Result<Var> {
    let pa = tape.avg_pool2(a)?;
    let pb = tape.avg_pool2(b)?;
    let u = psi(tape, pa, pb)?;
    let dims = tape.dims(a);
    tape_resample(tape, u, dims)
}

/// `TS{TS{DS{TS{DS{psi1}, psi2}}, psi3}, psi4}` for four arbitrary stages.
pub fn pyramid(tape: &mut Tape, stages: [&Evaluator<'_>; 4], a: Var, b: Var) -> Result<Var> {
    let [s1, s2, s3, s4] = stages;
    let ds1 = |t: &mut Tape, a, b| down_sample(t, s1, a, b);
    let ts12 = |t: &mut Tape, a, b| two_step(t, &ds1, s2, a, b);
    let ds2 = |t: &mut Tape, a, b| down_sample(t, &ts12, a, b);
    let ts3 = |t: &mut Tape, a, b| two_step(t, &ds2, s3, a, b);
    two_step(tape, &ts3, s4, a, b)
}

/// Which parameter set a map is evaluated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    AtoB,
    BtoA,
}

/// Four displacement grids per direction, one per pyramid stage, each used
/// directly as that stage's prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidModel {
    base: Dims,
    ab: [Tensor3; 4],
    ba: [Tensor3; 4],
}

/// Tape handles of a model's parameters.
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub ab: [Var; 4],
    pub ba: [Var; 4],
}

impl ModelVars {
    pub fn stages(&self, dir: Direction) -> [Var; 4] {
        match dir {
            Direction::AtoB => self.ab,
            Direction::BtoA => self.ba,
        }
    }

    /// Same handles with the two directions exchanged.
    pub fn swapped(&self) -> ModelVars {
        ModelVars {
            ab: self.ba,
            ba: self.ab,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = Var> + '_ {
        self.ab.iter().chain(&self.ba).copied()
    }
}

impl PyramidModel {
    pub const MIN_BASE: usize = 8;

    /// Stage grids at 1/4, 1/2, 1 and 1 of `base`, all zero.
    pub fn build(base: Dims) -> Result<Self> {
        if base.min_extent() < Self::MIN_BASE {
            return Err(Error::invalid(format!(
                "base grid {base} is too small to quarter; need at least {} per axis",
                Self::MIN_BASE
            )));
        }
        let zeros = Self::stage_dims_for(base).map(|d| Tensor3::zeros(d, 3));
        Ok(PyramidModel {
            base,
            ab: zeros.clone(),
            ba: zeros,
        })
    }

    pub fn stage_dims_for(base: Dims) -> [Dims; 4] {
        let half = base.pooled();
        [half.pooled(), half, base, base]
    }

    pub fn base(&self) -> Dims {
        self.base
    }

    pub fn stage_dims(&self) -> [Dims; 4] {
        Self::stage_dims_for(self.base)
    }

    pub fn stages(&self, dir: Direction) -> &[Tensor3; 4] {
        match dir {
            Direction::AtoB => &self.ab,
            Direction::BtoA => &self.ba,
        }
    }

    pub fn stages_mut(&mut self, dir: Direction) -> &mut [Tensor3; 4] {
        match dir {
            Direction::AtoB => &mut self.ab,
            Direction::BtoA => &mut self.ba,
        }
    }

    /// Loads `field` into the last stage of `dir`, so the fresh model evaluates to it.
    pub fn warm_start(&mut self, dir: Direction, field: &DisplacementField) -> Result<()> {
        let f = crate::transforms::resample_field_to(field, self.base)?;
        self.stages_mut(dir)[3] = f.into_u();
        Ok(())
    }

    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            ab: self.ab.clone().map(|t| tape.param(t)),
            ba: self.ba.clone().map(|t| tape.param(t)),
        }
    }

    pub(crate) fn set_stage(&mut self, dir: Direction, stage: usize, value: Tensor3) {
        self.stages_mut(dir)[stage] = value;
    }

    /// Evaluates the pyramid with parameter grids `params` on images `a`, `b`.
    pub fn tape_map(tape: &mut Tape, params: [Var; 4], a: Var, b: Var) -> Result<Var> {
        if tape.dims(a) != tape.dims(b) {
            return Err(Error::dims("pyramid", tape.dims(a), tape.dims(b)));
        }
        let stage = |i: usize| move |_: &mut Tape, _: Var, _: Var| Ok(params[i]);
        let (s1, s2, s3, s4) = (stage(0), stage(1), stage(2), stage(3));
        pyramid(tape, [&s1, &s2, &s3, &s4], a, b)
    }

    /// Map for one direction: `AtoB` gives `Phi[a, b]`, `BtoA` gives `Phi[b, a]`.
    pub fn evaluate(&self, a: &Volume, b: &Volume, dir: Direction) -> Result<DisplacementField> {
        if a.dims() != self.base || b.dims() != self.base {
            return Err(Error::dims("model evaluate", self.base, a.dims()));
        }
        let mut tape = Tape::new();
        let va = tape.constant(a.grid().clone());
        let vb = tape.constant(b.grid().clone());
        let params = self.stages(dir).clone().map(|t| tape.constant(t));
        let (x, y) = match dir {
            Direction::AtoB => (va, vb),
            Direction::BtoA => (vb, va),
        };
        let u = Self::tape_map(&mut tape, params, x, y)?;
        DisplacementField::new(tape.value(u).clone())
    }
}
