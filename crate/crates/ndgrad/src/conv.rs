//! Stride-1, "same"-padded 1D convolution kernels over `[batch, channels, time]`.

use crate::error::{NdError, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub time: usize,
    pub kernel: usize,
}

impl Dims {
    pub fn check(input: &[usize], weight: &[usize], bias: &[usize]) -> Result<Dims> {
        let mismatch = || NdError::ShapeMismatch {
            op: "conv1d",
            lhs: input.to_vec(),
            rhs: weight.to_vec(),
        };
        if weight.len() != 3 || !(input.len() == 2 || input.len() == 3) {
            return Err(mismatch());
        }
        let d = Self::of(input, weight);
        if input[input.len() - 2] != weight[1] {
            return Err(mismatch());
        }
        if bias != [d.c_out] {
            return Err(NdError::ShapeMismatch {
                op: "conv1d bias",
                lhs: bias.to_vec(),
                rhs: vec![d.c_out],
            });
        }
        if d.kernel % 2 == 0 {
            return Err(NdError::EvenKernel(d.kernel));
        }
        Ok(d)
    }

    pub fn of(input: &[usize], weight: &[usize]) -> Dims {
        let (batch, c_in, time) = match *input {
            [c, t] => (1, c, t),
            [b, c, t] => (b, c, t),
            _ => unreachable!("checked rank"),
        };
        Dims {
            batch,
            c_in,
            c_out: weight[0],
            time,
            kernel: weight[2],
        }
    }

    /// Valid output range `[lo, hi)` for kernel tap `k`, and the input shift.
    #[inline]
    fn tap(&self, k: usize) -> (usize, usize, isize) {
        let pad = (self.kernel - 1) / 2;
        let shift = k as isize - pad as isize;
        let lo = (-shift).max(0) as usize;
        let hi = (self.time as isize - shift).min(self.time as isize).max(0) as usize;
        (lo.min(hi), hi, shift)
    }
}

pub(crate) fn forward(d: &Dims, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let t = d.time;
    let mut out = vec![0.0; d.batch * d.c_out * t];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let row = &mut out[(b * d.c_out + co) * t..(b * d.c_out + co + 1) * t];
            row.fill(bias[co]);
            for ci in 0..d.c_in {
                let x = &input[(b * d.c_in + ci) * t..(b * d.c_in + ci + 1) * t];
                let w = &weight[(co * d.c_in + ci) * d.kernel..(co * d.c_in + ci + 1) * d.kernel];
                for (k, &wk) in w.iter().enumerate() {
                    let (lo, hi, shift) = d.tap(k);
                    let src = &x[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    for (o, &s) in row[lo..hi].iter_mut().zip(src) {
                        *o += wk * s;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn backward(
    d: &Dims,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t = d.time;
    let mut gi = vec![0.0; input.len()];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; d.c_out];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let go = &grad_out[(b * d.c_out + co) * t..(b * d.c_out + co + 1) * t];
            gb[co] += go.iter().sum::<f64>();
            for ci in 0..d.c_in {
                let base = (b * d.c_in + ci) * t;
                let x = &input[base..base + t];
                let wbase = (co * d.c_in + ci) * d.kernel;
                for k in 0..d.kernel {
                    let (lo, hi, shift) = d.tap(k);
                    let s0 = (lo as isize + shift) as usize;
                    let s1 = (hi as isize + shift) as usize;
                    let wk = weight[wbase + k];
                    let mut dot = 0.0;
                    for ((g, &xv), gx) in go[lo..hi]
                        .iter()
                        .zip(&x[s0..s1])
                        .zip(gi[base + s0..base + s1].iter_mut())
                    {
                        dot += g * xv;
                        *gx += wk * g;
                    }
                    gw[wbase + k] += dot;
                }
            }
        }
    }
    (gi, gw, gb)
}
