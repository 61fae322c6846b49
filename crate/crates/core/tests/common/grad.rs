//! Finite-difference checks of every objective on a 2-joint, 8-frame toy.
//! Each check returns the checker's worst relative error.

use super::*;
use gesturelab::kinematics::{fk_var, DegeneratePolicy};
use gesturelab::losses::*;
use gesturelab::model::{Ablation, Sampler};
use gesturelab::train::{build_objective, DiversityTarget, TrainConfig};
use ndgrad::{grad_check, Array, Tape, Var, DEFAULT_STEP};

pub const GRAD_TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn err(f: impl for<'t> Fn(&'t Tape, Var<'t>) -> ndgrad::Result<Var<'t>>, x: &Array) -> f64 {
    grad_check(f, x, DEFAULT_STEP).unwrap()
}

fn hr<F: for<'t> Fn(&'t Tape, Var<'t>) -> ndgrad::Result<Var<'t>>>(f: F) -> F {
    f
}

fn lift<T>(r: gesturelab::Result<T>) -> ndgrad::Result<T> {
    match r {
        Ok(v) => Ok(v),
        Err(gesturelab::Error::Array(e)) => Err(e),
        Err(e) => panic!("{e}"),
    }
}

fn motion_shape() -> [usize; 3] {
    [TOY_FRAMES, TOY_JOINTS, 3]
}

pub fn rotation() -> f64 {
    let mut r = rng(1);
    let pred = random_rot6d(&[TOY_FRAMES, TOY_JOINTS], &mut r);
    let target = random_rot6d(&[TOY_FRAMES, TOY_JOINTS], &mut r);
    err(
        |t, x| lift(rotation_loss(x, t.constant(target.clone()), DegeneratePolicy::Reject)),
        &pred,
    )
}

pub fn position() -> f64 {
    let mut r = rng(2);
    let pred = uniform(&motion_shape(), -1.0, 1.0, &mut r);
    let target = uniform(&motion_shape(), -1.0, 1.0, &mut r);
    err(|t, x| lift(position_loss(x, t.constant(target.clone()))), &pred)
}

pub fn speed() -> f64 {
    let mut r = rng(3);
    let pred = uniform(&motion_shape(), -1.0, 1.0, &mut r);
    let target = uniform(&motion_shape(), -1.0, 1.0, &mut r);
    err(|t, x| lift(speed_loss(x, t.constant(target.clone()))), &pred)
}

/// Rotation + position + speed, positions through FK.
pub fn reconstruction() -> f64 {
    let mut r = rng(4);
    let sk = toy_skeleton();
    let pred = random_rot6d(&[TOY_FRAMES, TOY_JOINTS], &mut r);
    let target = random_rot6d(&[TOY_FRAMES, TOY_JOINTS], &mut r);
    let w = LossWeights::default();
    err(
        |t, x| {
            let tgt = t.constant(target.clone());
            let p = MotionVars {
                rot6d: Some(x),
                positions: lift(fk_var(&sk, x, DegeneratePolicy::Reject))?,
            };
            let q = MotionVars {
                rot6d: Some(tgt),
                positions: lift(fk_var(&sk, tgt, DegeneratePolicy::Reject))?,
            };
            Ok(lift(motion_reconstruction_loss(p, q, &w, DegeneratePolicy::Reject))?.total)
        },
        &pred,
    )
}

/// Half the joints inside the dead zone, half outside.
pub fn relaxed() -> f64 {
    let mut r = rng(5);
    let target = uniform(&motion_shape(), -1.0, 1.0, &mut r);
    let pred = Array::from_fn(motion_shape().to_vec(), |i| {
        let off = if (i / 3) % 2 == 0 { 0.004 } else { 0.3 };
        target.data()[i] + off * if i % 2 == 0 { 1.0 } else { -1.0 }
    });
    err(|t, x| lift(relaxed_motion_loss(x, t.constant(target.clone()), 0.02)), &pred)
}

fn code_pair(seed: u64) -> (Array, Array) {
    let mut r = rng(seed);
    (uniform(&[16, TOY_FRAMES], -1.0, 1.0, &mut r), uniform(&[16, TOY_FRAMES], -1.0, 1.0, &mut r))
}

pub fn alignment() -> f64 {
    let (a, b) = code_pair(6);
    err(|t, x| lift(alignment_loss(x, t.constant(b.clone()))), &a)
}

pub fn bicycle() -> f64 {
    let (a, b) = code_pair(7);
    err(|t, x| lift(bicycle_loss(x, t.constant(b.clone()))), &a)
}

/// Below the bound (`tau` large) and clipped at it (`tau` small).
pub fn diversity(tau: f64) -> f64 {
    let mut r = rng(8);
    let a = uniform(&motion_shape(), -1.0, 1.0, &mut r);
    let b = uniform(&motion_shape(), -1.0, 1.0, &mut r);
    err(|t, x| lift(diversity_loss(x, t.constant(b.clone()), tau)), &a)
}

pub fn kl_mean() -> f64 {
    let mut r = rng(9);
    let mean = uniform(&[16, TOY_FRAMES], -1.5, 1.5, &mut r);
    let log_var = uniform(&[16, TOY_FRAMES], -2.0, 2.0, &mut r);
    err(|t, x| lift(kl_divergence(x, t.constant(log_var.clone()))), &mean)
}

pub fn kl_log_var() -> f64 {
    let mut r = rng(10);
    let mean = uniform(&[16, TOY_FRAMES], -1.5, 1.5, &mut r);
    let log_var = uniform(&[16, TOY_FRAMES], -2.0, 2.0, &mut r);
    err(|t, x| lift(kl_divergence(t.constant(mean.clone()), x)), &log_var)
}

/// The whole training objective with respect to every parameter.
pub fn objective(ablation: Ablation, target: DiversityTarget) -> f64 {
    let cfg = toy_config(ablation);
    let params = toy_params(cfg.clone(), 11);
    let batch = toy_batch(&cfg, 12);
    let sk = toy_skeleton();
    let tc = TrainConfig {
        diversity_target: target,
        ..TrainConfig::desk()
    };
    let (flat, shapes) = flatten(&params);
    // The cycle term is a stop-gradient path, so its anchor is taken at the
    // base point and held fixed while differencing.
    let anchor = {
        let tape = Tape::new();
        let g = params.bind(&tape, false);
        build_objective(&g, &batch, &tc, &sk, &mut Sampler::seeded(77), None).unwrap().anchor
    };
    let f = hr(|_, x| {
        let mut at = 0;
        let mut vars = Vec::with_capacity(shapes.len());
        for s in &shapes {
            let n: usize = s.iter().product();
            vars.push(x.slice(0, at, n)?.reshape(s)?);
            at += n;
        }
        let g = lift(params.bind_vars(x.tape(), vars))?;
        let mut sampler = Sampler::seeded(77);
        Ok(lift(build_objective(&g, &batch, &tc, &sk, &mut sampler, anchor.as_ref()))?.total)
    });
    grad_check(f, &flat, DEFAULT_STEP).unwrap()
}

/// Every check by name.
pub fn suite() -> Vec<(&'static str, f64)> {
    vec![
        ("rotation", rotation()),
        ("position", position()),
        ("speed", speed()),
        ("reconstruction", reconstruction()),
        ("relaxed", relaxed()),
        ("alignment", alignment()),
        ("bicycle", bicycle()),
        ("diversity/below", diversity(10.0)),
        ("diversity/clipped", diversity(0.05)),
        ("kl/mean", kl_mean()),
        ("kl/log_var", kl_log_var()),
        ("objective/full", objective(Ablation::Diversity, DiversityTarget::SecondSample)),
        ("objective/ground_truth", objective(Ablation::Diversity, DiversityTarget::GroundTruth)),
        ("objective/mapping", objective(Ablation::Mapping, DiversityTarget::SecondSample)),
        ("objective/bicycle", objective(Ablation::Bicycle, DiversityTarget::SecondSample)),
        ("objective/baseline", objective(Ablation::Baseline, DiversityTarget::SecondSample)),
    ]
}
