//! Shared fixtures for the integration tests.
#![allow(dead_code)]

pub mod grad;
pub mod oracles;

use std::sync::Arc;

use gesturelab::kinematics::{forward_kinematics, MotionMode, Rotation, Skeleton};
use gesturelab::model::{Ablation, ModelConfig, ModelParams};
use gesturelab::train::Batch;
use ndgrad::Array;
pub use rand::{Rng, SeedableRng};
pub use rand_chacha::ChaCha8Rng;

pub const TOY_JOINTS: usize = 2;
pub const TOY_FRAMES: usize = 8;

pub fn toy_skeleton() -> Arc<Skeleton> {
    Arc::new(Skeleton::chain(TOY_JOINTS, [0.1, 0.3, -0.05]).unwrap())
}

/// Well-conditioned random 6D rotations `[shape..., 6]`.
pub fn random_rot6d(shape: &[usize], rng: &mut ChaCha8Rng) -> Array {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n * 6);
    for _ in 0..n {
        let axis: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let r = Rotation::from_axis_angle(axis, rng.gen_range(-2.5..2.5));
        // Rescale the columns so decoding is not the identity map.
        let six = r.to_rot6d();
        let (sa, sb) = (rng.gen_range(0.6..1.6), rng.gen_range(0.6..1.6));
        data.extend(six.iter().enumerate().map(|(i, v)| if i < 3 { v * sa } else { v * sb }));
    }
    let mut full = shape.to_vec();
    full.push(6);
    Array::new(full, data).unwrap()
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Array {
    Array::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

pub fn toy_config(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        audio_bins: 8,
        code_dim: 4,
        hidden: 8,
        kernel: 3,
        blocks: 2,
        ..ModelConfig::new(MotionMode::Rotational3d, TOY_JOINTS, ablation)
    }
}

/// Random 3D batch `[2, 8, 2, 6]` with matching features and FK targets.
pub fn toy_batch(cfg: &ModelConfig, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = 2;
    let motion = random_rot6d(&[b, TOY_FRAMES, TOY_JOINTS], &mut rng);
    let sk = toy_skeleton();
    let mut pos = Vec::new();
    for i in 0..b {
        let per = TOY_FRAMES * TOY_JOINTS * 6;
        let one = Array::new(vec![TOY_FRAMES, TOY_JOINTS, 6], motion.data()[i * per..(i + 1) * per].to_vec()).unwrap();
        pos.extend_from_slice(forward_kinematics(&sk, &one).unwrap().data());
    }
    Batch {
        features: uniform(&[b, cfg.audio_bins, TOY_FRAMES], -2.0, 2.0, &mut rng),
        motion,
        positions: Array::new(vec![b, TOY_FRAMES, TOY_JOINTS, 3], pos).unwrap(),
    }
}

/// Initialized parameters with random (not zero) biases, so no ReLU sits
/// exactly on its kink.
pub fn toy_params(cfg: ModelConfig, seed: u64) -> ModelParams {
    let p = ModelParams::init(cfg.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let arrays = p
        .arrays()
        .iter()
        .map(|a| if a.rank() == 1 { uniform(a.shape(), -0.1, 0.1, &mut rng) } else { a.clone() })
        .collect();
    ModelParams::from_arrays(cfg, arrays, None).unwrap()
}

/// All parameters flattened, and the shapes to cut them back.
pub fn flatten(p: &ModelParams) -> (Array, Vec<Vec<usize>>) {
    let shapes = p.arrays().iter().map(|a| a.shape().to_vec()).collect();
    let data: Vec<f64> = p.arrays().iter().flat_map(|a| a.data().iter().copied()).collect();
    (Array::from_vec(data), shapes)
}
