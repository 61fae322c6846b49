//! Differentiates a small 1D conv net on the tape and compares every
//! partial derivative with central differences.
//!
//!     cargo run -p ndgrad --example grad_check

use ndgrad::{grad_check, Array, Tape, Var, DEFAULT_STEP};

fn net<'t>(tape: &'t Tape, w: Var<'t>) -> ndgrad::Result<Var<'t>> {
    // [batch 1, channels 2, time 6] signal through a 3-tap conv, ReLU-free
    // so the objective is smooth everywhere.
    let x = tape.constant(Array::from_fn(vec![1, 2, 6], |i| (i as f64 * 0.7).sin()));
    let b = tape.constant(Array::from_vec(vec![0.05, -0.02, 0.0]));
    let y = x.conv1d(w, b)?;
    y.square()?.exp()?.mean()
}

fn main() -> ndgrad::Result<()> {
    let w0 = Array::from_fn(vec![3, 2, 3], |i| 0.1 * (i as f64 - 8.0) / 9.0);

    let tape = Tape::new();
    let w = tape.leaf(w0.clone());
    let loss = net(&tape, w)?;
    let grads = tape.backward(loss)?;
    println!("loss {:.6}", loss.item());
    println!("dloss/dw[0, 0, :] = {:?}", &grads.wrt(w).data()[..3]);
    println!("tape ops: {:?}", tape.op_counts());

    let err = grad_check(net, &w0, DEFAULT_STEP)?;
    println!("max relative error vs finite differences: {err:.2e}");
    Ok(())
}
