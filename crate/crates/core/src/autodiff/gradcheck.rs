use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor3, Var};
use crate::error::{Error, Result};

/// Number of coordinates probed by [`grad_check`].
pub const GRAD_CHECK_SAMPLES: usize = 64;
const SAMPLE_SEED: u64 = 0x6772_6164;

/// Compares the reverse-mode gradient of `f` at `x0` against central finite
/// differences with step `h`.
///
/// `f` receives a fresh tape and the parameter node and must return a scalar
/// node. The probe set is a fixed pseudo-random sample of
/// [`GRAD_CHECK_SAMPLES`] coordinates (every coordinate when `x0` is smaller).
/// Returns the largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, x0: &Tensor3, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.param(x0.clone());
    let loss = f(&mut tape, x)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.get(x).expect("parameter gradient").data().to_vec();

    let eval = |data: Vec<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let t = Tensor3::new(x0.dims(), x0.channels(), data)?;
        let x = tape.param(t);
        let l = f(&mut tape, x)?;
        let v = tape.value(l).item();
        if !v.is_finite() {
            return Err(Error::NonFinite { op: "grad_check" });
        }
        Ok(v)
    };

    let n = x0.len();
    let probes: Vec<usize> = if n <= GRAD_CHECK_SAMPLES {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
        let mut v = index::sample(&mut rng, n, GRAD_CHECK_SAMPLES).into_vec();
        v.sort_unstable();
        v
    };

    let mut worst = 0.0_f64;
    for i in probes {
        let mut plus = x0.data().to_vec();
        plus[i] += h;
        let mut minus = x0.data().to_vec();
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
