//! Central finite-difference check of tape gradients.

use crate::array::Array;
use crate::error::{NdError, Result};
use crate::tape::{Tape, Var};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Max over all coordinates of `|analytic - numeric| / max(1, |analytic|)`
/// for the scalar function `f` at `x`.
pub fn grad_check<F>(f: F, x: &Array, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    grad_check_coords(f, x, h, &coords)
}

/// Same as [`grad_check`], restricted to the listed flat coordinates.
pub fn grad_check_coords<F>(f: F, x: &Array, h: f64, coords: &[usize]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let leaf = tape.leaf(x.clone());
        let root = f(&tape, leaf)?;
        tape.backward(root)?.wrt(leaf)
    };
    let eval = |p: &Array| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.constant(p.clone());
        let root = f(&tape, v)?;
        let val = root.value();
        if val.len() != 1 {
            return Err(NdError::NotScalar(val.shape().to_vec()));
        }
        Ok(val.item())
    };
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
