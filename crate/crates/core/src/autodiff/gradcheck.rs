use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Builds `f` on a fresh tape with `input` as the only parameter and
/// compares the reverse-mode gradient with central differences. Returns the
/// maximum over coordinates of `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, input: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.param(input.clone());
    let loss = f(&mut tape, x)?;
    let analytic = tape.backward(loss)?.wrt(x);

    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.param(t.clone());
        let loss = f(&mut tape, x)?;
        Ok(tape.value(loss).item())
    };

    let mut worst: f64 = 0.0;
    let mut probe = input.clone();
    for i in 0..input.len() {
        let x0 = input.data()[i];
        probe.data_mut()[i] = x0 + h;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = x0 - h;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = x0;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
