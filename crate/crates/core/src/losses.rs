//! Training objectives over tape variables.
//!
//! Position-like inputs are `[..., J, D]`; speed additionally treats axis
//! `rank - 3` as time. Latent codes are `[..., k, T]`.

use std::collections::BTreeMap;

use ndgrad::Var;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{geodesic_var, rot6d_to_matrix_var, DegeneratePolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub rot: f64,
    pub pos: f64,
    pub speed: f64,
    pub align: f64,
    pub relax: f64,
    pub cyc: f64,
    pub ds: f64,
    pub kl: f64,
    /// Dead zone of the relaxed loss, meters.
    pub rho: f64,
    /// Upper bound on the rewarded diversity distance, meters.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rot: 1.0,
            pos: 1.0,
            speed: 5.0,
            align: 1.0,
            relax: 1.0,
            cyc: 1.0,
            ds: 1.0,
            kl: 0.01,
            rho: 0.02,
            tau: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.rot, self.pos, self.speed, self.align, self.relax, self.cyc, self.ds, self.kl, self.rho, self.tau,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.rho > 0.0 && self.tau > 0.0) {
            return Err(Error::Config("rho and tau must be positive".into()));
        }
        Ok(())
    }
}

/// Scalar value of every term plus the weighted total.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: BTreeMap<String, f64>,
    pub total: f64,
}

impl LossReport {
    pub fn get(&self, term: &str) -> Option<f64> {
        self.terms.get(term).copied()
    }

    /// One JSON line: `{"step": n, "<term>": v, ..., "total": t}`.
    pub fn json_line(&self, step: u64) -> String {
        let mut obj = serde_json::Map::new();
        obj.insert("step".into(), step.into());
        for (k, v) in &self.terms {
            obj.insert(k.clone(), (*v).into());
        }
        obj.insert("total".into(), self.total.into());
        serde_json::Value::Object(obj).to_string()
    }
}

fn same_shape(op: &str, a: Var<'_>, b: Var<'_>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())))
    }
}

/// Per-joint coordinate-sum L1 norms, `[..., J]`.
fn joint_l1<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    let last = pred.shape().len() - 1;
    Ok(pred.sub(target)?.abs()?.sum_axes(&[last])?)
}

/// Mean geodesic distance between decoded 6D rotations `[..., 6]`.
pub fn rotation_loss<'t>(pred: Var<'t>, target: Var<'t>, policy: DegeneratePolicy) -> Result<Var<'t>> {
    same_shape("rotation_loss", pred, target)?;
    let p = rot6d_to_matrix_var(pred, policy)?;
    let t = rot6d_to_matrix_var(target, DegeneratePolicy::Reject)?;
    Ok(geodesic_var(p, t)?.mean()?)
}

/// Mean over joints and frames of `‖p̂ − p‖₁`.
pub fn position_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    same_shape("position_loss", pred, target)?;
    if pred.shape().len() < 2 {
        return Err(Error::Shape("positions need [..., J, D]".into()));
    }
    Ok(joint_l1(pred, target)?.mean()?)
}

fn velocity<'t>(p: Var<'t>) -> Result<Var<'t>> {
    let axis = p.shape().len() - 3;
    let t = p.shape()[axis];
    Ok(p.slice(axis, 1, t - 1)?.sub(p.slice(axis, 0, t - 1)?)?)
}

/// Position loss between frame-to-frame velocities.
pub fn speed_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    same_shape("speed_loss", pred, target)?;
    let shape = pred.shape();
    if shape.len() < 3 || shape[shape.len() - 3] < 2 {
        return Err(Error::Shape(format!("speed needs [.., T >= 2, J, D], got {shape:?}")));
    }
    position_loss(velocity(pred)?, velocity(target)?)
}

/// Motion prediction or target on the tape; `rot6d` is absent in 2D mode.
#[derive(Clone, Copy)]
pub struct MotionVars<'t> {
    pub rot6d: Option<Var<'t>>,
    pub positions: Var<'t>,
}

pub struct MotionTerms<'t> {
    pub rot: Option<Var<'t>>,
    pub pos: Var<'t>,
    pub speed: Var<'t>,
    pub total: Var<'t>,
}

/// `λ_rot·L_rot + λ_pos·L_pos + λ_speed·L_speed`; the rotation term is
/// dropped when either side has no rotations.
pub fn motion_reconstruction_loss<'t>(
    pred: MotionVars<'t>,
    target: MotionVars<'t>,
    w: &LossWeights,
    policy: DegeneratePolicy,
) -> Result<MotionTerms<'t>> {
    let rot = match (pred.rot6d, target.rot6d) {
        (Some(p), Some(t)) => Some(rotation_loss(p, t, policy)?),
        _ => None,
    };
    let pos = position_loss(pred.positions, target.positions)?;
    let speed = speed_loss(pred.positions, target.positions)?;
    let mut total = pos.scale(w.pos)?.add(speed.scale(w.speed)?)?;
    if let Some(r) = rot {
        total = total.add(r.scale(w.rot)?)?;
    }
    Ok(MotionTerms {
        rot,
        pos,
        speed,
        total,
    })
}

/// Mean of `max(‖p̂ − p‖₁ − ρ, 0)` over joints and frames.
pub fn relaxed_motion_loss<'t>(pred: Var<'t>, target: Var<'t>, rho: f64) -> Result<Var<'t>> {
    same_shape("relaxed_motion_loss", pred, target)?;
    Ok(joint_l1(pred, target)?.add_scalar(-rho)?.max_scalar(0.0)?.mean()?)
}

/// Elementwise mean L1 between two codes.
pub fn alignment_loss<'t>(s_a: Var<'t>, s_m: Var<'t>) -> Result<Var<'t>> {
    same_shape("alignment_loss", s_a, s_m)?;
    Ok(s_a.sub(s_m)?.abs()?.mean()?)
}

/// Elementwise mean L1 between the re-encoded code and the code that
/// produced the motion.
pub fn bicycle_loss<'t>(i_hat: Var<'t>, i_r: Var<'t>) -> Result<Var<'t>> {
    same_shape("bicycle_loss", i_hat, i_r)?;
    Ok(i_hat.sub(i_r)?.abs()?.mean()?)
}

/// `-min(position_loss(a, b), τ)`.
pub fn diversity_loss<'t>(a: Var<'t>, b: Var<'t>, tau: f64) -> Result<Var<'t>> {
    Ok(position_loss(a, b)?.min_scalar(tau)?.neg()?)
}

/// Closed-form KL to the standard normal, summed over the channel axis
/// (`rank - 2`) and averaged over every other axis.
pub fn kl_divergence<'t>(mean: Var<'t>, log_var: Var<'t>) -> Result<Var<'t>> {
    same_shape("kl_divergence", mean, log_var)?;
    let rank = mean.shape().len();
    if rank < 2 {
        return Err(Error::Shape("codes need [..., k, T]".into()));
    }
    let per = log_var.exp()?.add(mean.square()?)?.add_scalar(-1.0)?.sub(log_var)?;
    Ok(per.sum_axes(&[rank - 2])?.mean()?.scale(0.5)?)
}
