//! Independent reference computations for kinematics and the KL term.

use super::*;
use gesturelab::kinematics::{forward_kinematics, geodesic_distance, rot6d_to_matrix, Joint};
use gesturelab::losses::kl_divergence;
use ndgrad::Tape;
use rand_distr::StandardNormal;

pub type M3 = [[f64; 3]; 3];

pub fn mat_mul(a: &M3, b: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_vec(a: &M3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| (0..3).map(|k| a[i][k] * v[k]).sum())
}

/// Unit quaternion `(w, x, y, z)` to matrix.
pub fn quat_matrix(q: [f64; 4]) -> M3 {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn random_quat(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n < 1.0 {
            return q.map(|v| v / n);
        }
    }
}

/// A 6D encoding of `m` that is not already orthonormal: columns rescaled
/// and the second sheared along the first.
pub fn messy_6d(m: &M3, rng: &mut impl Rng) -> [f64; 6] {
    let (sa, sb, shear) = (rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0), rng.gen_range(-2.0..2.0));
    let a = [m[0][0], m[1][0], m[2][0]].map(|v| v * sa);
    let b = [0, 1, 2].map(|i| sb * m[i][1] + shear * a[i]);
    [a[0], a[1], a[2], b[0], b[1], b[2]]
}

pub fn random_skeleton(rng: &mut impl Rng) -> Skeleton {
    let n = rng.gen_range(2..9);
    let mut joints = vec![Joint {
        name: "root".into(),
        parent: None,
        offset: [0.0; 3],
    }];
    for j in 1..n {
        joints.push(Joint {
            name: format!("j{j}"),
            parent: Some(rng.gen_range(0..j)),
            offset: std::array::from_fn(|_| rng.gen_range(-0.4..0.4)),
        });
    }
    let root = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    Skeleton::new(joints, root).unwrap()
}

/// World position of joint `j` by walking up to the root.
pub fn naive_world(sk: &Skeleton, local: &[M3], j: usize) -> (M3, [f64; 3]) {
    match sk.parent(j) {
        None => (local[j], sk.root_position()),
        Some(p) => {
            let (gp, pp) = naive_world(sk, local, p);
            let g = mat_mul(&gp, &local[j]);
            let bone = mat_vec(&g, sk.offset(j));
            (g, [pp[0] + bone[0], pp[1] + bone[1], pp[2] + bone[2]])
        }
    }
}

/// Worst coordinate gap between FK and the naive recursion over `cases`
/// random skeletons.
pub fn fk_max_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let sk = random_skeleton(&mut rng);
        let j = sk.joint_count();
        let frames = rng.gen_range(1..4);
        let mut rot6 = Vec::new();
        let mut locals = Vec::new();
        for _ in 0..frames {
            let local: Vec<M3> = (0..j).map(|_| quat_matrix(random_quat(&mut rng))).collect();
            for m in &local {
                rot6.extend_from_slice(&messy_6d(m, &mut rng));
            }
            locals.push(local);
        }
        let pos = forward_kinematics(&sk, &Array::new(vec![frames, j, 6], rot6).unwrap()).unwrap();
        for (t, local) in locals.iter().enumerate() {
            for jj in 0..j {
                let (_, expect) = naive_world(&sk, local, jj);
                for (c, e) in expect.iter().enumerate() {
                    worst = worst.max((pos.get(&[t, jj, c]) - e).abs());
                }
            }
        }
    }
    worst
}

/// Worst gap between the geodesic distance and `2·acos|q1·q2|`, skipping
/// pairs within `margin` of 0 or π.
pub fn geodesic_max_error(cases: usize, margin: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < cases {
        let (q1, q2) = (random_quat(&mut rng), random_quat(&mut rng));
        let d = q1.iter().zip(&q2).map(|(a, b)| a * b).sum::<f64>().abs().min(1.0);
        let angle = 2.0 * d.acos();
        if angle < margin || angle > std::f64::consts::PI - margin {
            continue;
        }
        let got = geodesic_distance(&Rotation(quat_matrix(q1)), &Rotation(quat_matrix(q2)));
        worst = worst.max((got - angle).abs());
        checked += 1;
    }
    worst
}

/// Worst entry gap after matrix → 6D → matrix, and after decoding a
/// rescaled, sheared 6D encoding.
pub fn rot6d_round_trip_max_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let m = quat_matrix(random_quat(&mut rng));
        let back = rot6d_to_matrix(&Rotation(m).to_rot6d()).unwrap();
        let messy = rot6d_to_matrix(&messy_6d(&m, &mut rng)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((back.0[i][j] - m[i][j]).abs()).max((messy.0[i][j] - m[i][j]).abs());
            }
        }
    }
    worst
}

/// Closed-form KL of a single `N(mean, exp(log_var))` channel.
pub fn kl_closed(mean: f64, log_var: f64) -> f64 {
    let tape = Tape::new();
    let m = tape.constant(Array::new(vec![1, 1], vec![mean]).unwrap());
    let v = tape.constant(Array::new(vec![1, 1], vec![log_var]).unwrap());
    kl_divergence(m, v).unwrap().value().data()[0]
}

/// `E_q[log q(z) − log p(z)]` from `samples` draws.
pub fn kl_monte_carlo(mean: f64, log_var: f64, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let sd = (0.5 * log_var).exp();
    let mut sum = 0.0;
    for _ in 0..samples {
        let e: f64 = rng.sample(StandardNormal);
        let z = mean + sd * e;
        sum += -0.5 * e * e - 0.5 * log_var + 0.5 * z * z;
    }
    sum / samples as f64
}

/// Test points spread over means in [-2, 2] and log-variances in [-2, 2],
/// kept away from the prior itself where the KL vanishes.
pub fn kl_points(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        if kl_closed(p.0, p.1) > 0.05 {
            out.push(p);
        }
    }
    out
}

/// Worst relative gap between closed form and Monte Carlo.
pub fn kl_max_rel_error(points: usize, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4b4c);
    kl_points(points, seed)
        .into_iter()
        .map(|(m, lv)| {
            let exact = kl_closed(m, lv);
            (kl_monte_carlo(m, lv, samples, &mut rng) - exact).abs() / exact
        })
        .fold(0.0, f64::max)
}
