use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Direction, PyramidModel};
use crate::autodiff::{Tape, Tensor3};
use crate::error::{Error, Result};
use crate::icon::{tape_randomized_loss, LossConfig, LossTerms};
use crate::transforms::DisplacementField;
use crate::volume::Volume;

/// Learning-rate multiplier applied to `lr` when optimizing from a zero model.
pub const COLD_LR_SCALE: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub steps: usize,
    pub lr: f64,
    /// Multiplier on `lr`. Absent means [`COLD_LR_SCALE`] from a zero model
    /// and 1 when warm-started.
    pub lr_scale: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Recorded in the run snapshot; the optimizer itself draws no random numbers.
    pub seed: u64,
    /// Scale each stage's rate by `voxels(stage 1) / voxels(stage)`, so a
    /// full-resolution grid moves 1/64 as fast as the quarter-resolution one.
    /// Off gives every parameter the same rate.
    pub resolution_scaled_lr: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            steps: 50,
            lr: 2e-5,
            lr_scale: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            resolution_scaled_lr: true,
        }
    }
}

impl OptimizerConfig {
    pub fn effective_lr(&self, warm_started: bool) -> f64 {
        let scale = self
            .lr_scale
            .unwrap_or(if warm_started { 1.0 } else { COLD_LR_SCALE });
        self.lr * scale
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("optimizer {name} must be positive, got {v}")))
            }
        };
        positive("lr", self.lr)?;
        positive("eps", self.eps)?;
        if let Some(s) = self.lr_scale {
            positive("lr_scale", s)?;
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("optimizer {name} must lie in [0, 1), got {b}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub warm_started: bool,
    pub effective_lr: f64,
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub phi_ab: DisplacementField,
    pub phi_ba: DisplacementField,
    /// Objective before the first update, then after each update.
    pub loss_trace: Vec<f64>,
    pub final_terms: LossTerms,
    pub model: PyramidModel,
    pub config: RegistrationConfig,
    pub warnings: Vec<String>,
}

impl RegistrationResult {
    pub fn initial_loss(&self) -> f64 {
        self.loss_trace[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace holds the initial value")
    }

    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "loss"])?;
        for (i, l) in self.loss_trace.iter().enumerate() {
            w.write_record([i.to_string(), format!("{l:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `phi_ab.meta`, `phi_ba.meta` (with their `.raw` data) and `trace.csv`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        crate::volume::raw::write_field(&self.phi_ab, dir.join("phi_ab.meta"))?;
        crate::volume::raw::write_field(&self.phi_ba, dir.join("phi_ba.meta"))?;
        self.write_trace_csv(dir.join("trace.csv"))
    }
}

struct Adam {
    cfg: OptimizerConfig,
    lr: Vec<f64>,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(cfg: OptimizerConfig, lr: Vec<f64>, sizes: &[usize]) -> Self {
        Adam {
            cfg,
            lr,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn step(&mut self, params: &mut [Vec<f64>], grads: &[&[f64]]) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v, g, lr) = (&mut self.m[k], &mut self.v[k], grads[k], self.lr[k]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + self.cfg.eps);
            }
        }
    }
}

const SLOTS: [(Direction, usize); 8] = [
    (Direction::AtoB, 0),
    (Direction::AtoB, 1),
    (Direction::AtoB, 2),
    (Direction::AtoB, 3),
    (Direction::BtoA, 0),
    (Direction::BtoA, 1),
    (Direction::BtoA, 2),
    (Direction::BtoA, 3),
];

fn as_abort(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { .. } | Error::Domain { .. } => Error::NumericalAbort {
            step,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Adam on every stage parameter of `model`, minimizing the randomized
/// objective with maps from `input` and similarity on `loss`.
pub fn optimize_model(
    mut model: PyramidModel,
    input: (&Volume, &Volume),
    loss: (&Volume, &Volume),
    loss_cfg: &LossConfig,
    opt: &OptimizerConfig,
    warm_started: bool,
) -> Result<RegistrationResult> {
    loss_cfg.validate()?;
    opt.validate()?;
    for v in [input.0, input.1, loss.0, loss.1] {
        if v.dims() != model.base() {
            return Err(Error::dims("instance_optimize", model.base(), v.dims()));
        }
    }
    let lr = opt.effective_lr(warm_started);
    let sizes: Vec<usize> = SLOTS
        .iter()
        .map(|&(d, s)| model.stages(d)[s].len())
        .collect();
    let coarsest = model.stage_dims()[0].voxels() as f64;
    let rates: Vec<f64> = SLOTS
        .iter()
        .map(|&(_, s)| {
            if opt.resolution_scaled_lr {
                lr * coarsest / model.stage_dims()[s].voxels() as f64
            } else {
                lr
            }
        })
        .collect();
    let mut adam = Adam::new(*opt, rates, &sizes);
    let mut trace = Vec::with_capacity(opt.steps + 1);
    let mut tape = Tape::new();
    let mut terms = None;

    for step in 0..=opt.steps {
        tape.reset();
        let vars = model.register(&mut tape);
        let [ia, ib, la, lb] =
            [input.0, input.1, loss.0, loss.1].map(|v| tape.constant(v.grid().clone()));
        let lv = tape_randomized_loss(&mut tape, (ia, ib), (la, lb), &vars, loss_cfg)
            .map_err(|e| as_abort(step, e))?;
        let t = LossTerms::read(&tape, &lv);
        if !t.total.is_finite() {
            return Err(Error::NumericalAbort {
                step,
                loss: t.total,
            });
        }
        trace.push(t.total);
        terms = Some(t);
        if step == opt.steps {
            break;
        }
        let grads = tape.backward(lv.total).map_err(|e| as_abort(step, e))?;
        let handles: Vec<_> = vars.all().collect();
        let gslices: Vec<&[f64]> = handles
            .iter()
            .map(|v| grads.get(*v).expect("every parameter has a gradient").data())
            .collect();
        let mut params: Vec<Vec<f64>> = SLOTS
            .iter()
            .map(|&(d, s)| model.stages(d)[s].data().to_vec())
            .collect();
        adam.step(&mut params, &gslices);
        for (&(d, s), p) in SLOTS.iter().zip(params) {
            let dims = model.stages(d)[s].dims();
            let t = Tensor3::new(dims, 3, p).map_err(|e| as_abort(step, e))?;
            model.set_stage(d, s, t);
        }
    }

    let (ia, ib) = input;
    let phi_ab = model.evaluate(ia, ib, Direction::AtoB)?;
    let phi_ba = model.evaluate(ia, ib, Direction::BtoA)?;
    let mut warnings = Vec::new();
    let (first, last) = (trace[0], *trace.last().expect("non-empty"));
    if last > first {
        warnings.push(format!(
            "objective rose from {first:e} to {last:e}; Adam steps are not monotone"
        ));
    }
    Ok(RegistrationResult {
        phi_ab,
        phi_ba,
        loss_trace: trace,
        final_terms: terms.expect("at least one evaluation"),
        model,
        config: RegistrationConfig {
            loss: *loss_cfg,
            optimizer: *opt,
            warm_started,
            effective_lr: lr,
        },
        warnings,
    })
}

/// Registers `ia` to `ib` from the identity, in both directions.
pub fn instance_optimize(
    ia: &Volume,
    ib: &Volume,
    loss_cfg: &LossConfig,
    opt: &OptimizerConfig,
) -> Result<RegistrationResult> {
    if ia.dims() != ib.dims() {
        return Err(Error::dims("instance_optimize", ia.dims(), ib.dims()));
    }
    let model = PyramidModel::build(ia.dims())?;
    optimize_model(model, (ia, ib), (ia, ib), loss_cfg, opt, false)
}

/// Refines provided maps (`phi_ab`, and optionally `phi_ba`).
pub fn instance_optimize_warm(
    ia: &Volume,
    ib: &Volume,
    phi_ab: &DisplacementField,
    phi_ba: Option<&DisplacementField>,
    loss_cfg: &LossConfig,
    opt: &OptimizerConfig,
) -> Result<RegistrationResult> {
    if ia.dims() != ib.dims() {
        return Err(Error::dims("instance_optimize", ia.dims(), ib.dims()));
    }
    let mut model = PyramidModel::build(ia.dims())?;
    model.warm_start(Direction::AtoB, phi_ab)?;
    if let Some(ba) = phi_ba {
        model.warm_start(Direction::BtoA, ba)?;
    }
    optimize_model(model, (ia, ib), (ia, ib), loss_cfg, opt, true)
}
