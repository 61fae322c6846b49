//! Parameter initialization and the Adam optimizer.

use ndgrad::Array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Result<Array> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::Config("xavier fans must be at least 1".into()));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Ok(Array::new(shape.to_vec(), data)?)
}

pub fn xavier_init(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64) -> Result<Array> {
    xavier_uniform(shape, fan_in, fan_out, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before scaling.
pub fn clip_global_norm(grads: &mut [Array], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<Array>,
    pub v: Vec<Array>,
}

impl Adam {
    pub fn new(params: &[Array]) -> Self {
        let zeros = || params.iter().map(|p| Array::zeros(p.shape().to_vec())).collect();
        Adam {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected update. Nothing is modified if any gradient is
    /// non-finite or mis-shaped.
    pub fn update(&mut self, params: &mut [Array], grads: &[Array], names: &[String], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("adam: gradient shape for `{}`", names[i])));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: names.get(i).cloned().unwrap_or_else(|| i.to_string()),
                });
            }
        }
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (k, &gk) in g.data().iter().enumerate() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}
