//! Multi-resolution map composition and per-pair instance optimization.
//!
//! A stage evaluator maps an image pair to a displacement field. `TS` chains two
//! evaluators (the second sees the source warped by the first), `DS` runs one on
//! 2x pooled images; the model nests them as
//! `TS{TS{DS{TS{DS{psi1}, psi2}}, psi3}, psi4}`. Here each `psi_i` is a
//! directly optimized displacement grid, kept separately for each direction.

mod model;
mod optimize;

pub use model::{down_sample, pyramid, two_step, Direction, Evaluator, ModelVars, PyramidModel};
pub use optimize::{
    instance_optimize, instance_optimize_warm, optimize_model, OptimizerConfig,
    RegistrationConfig, RegistrationResult, COLD_LR_SCALE,
};
