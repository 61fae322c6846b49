//! Skeletons, 6D rotations, forward kinematics and geodesic distance.
//!
//! Per-joint rotations are local (relative to the parent). Forward
//! kinematics composes them down the chain, `G_j = G_parent(j) · L_j`, and
//! places each joint at `p_j = p_parent(j) + G_j s_j` with `s_j` the fixed
//! bone offset of `j`. The root sits at `root_position` in every frame.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndgrad::{concat, Array, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp margin for the `acos` argument of the geodesic distance.
pub const ACOS_EPS: f64 = 1e-7;
/// Below this norm a 6D half-vector counts as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-8;
const JITTER: f64 = 1e-6;

static DEGENERATE_FALLBACKS: AtomicU64 = AtomicU64::new(0);

/// How many times the training-time jitter fallback has fired in this process.
pub fn degenerate_fallbacks() -> u64 {
    DEGENERATE_FALLBACKS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    joints: Vec<Joint>,
    root_position: [f64; 3],
}

impl Skeleton {
    /// Validates the hierarchy and renumbers it so that every parent index
    /// precedes its children.
    pub fn new(joints: Vec<Joint>, root_position: [f64; 3]) -> Result<Self> {
        let n = joints.len();
        if n < 2 {
            return Err(Error::Skeleton("need a root and at least one child".into()));
        }
        let roots: Vec<usize> = (0..n).filter(|&j| joints[j].parent.is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::Skeleton(format!("expected one root, found {}", roots.len())));
        }
        for (j, joint) in joints.iter().enumerate() {
            if let Some(p) = joint.parent {
                if p >= n || p == j {
                    return Err(Error::Skeleton(format!("joint {j} has invalid parent {p}")));
                }
            }
            if !joint.offset.iter().chain(&root_position).all(|v| v.is_finite()) {
                return Err(Error::Skeleton(format!("joint {j} has a non-finite offset")));
            }
        }
        // Breadth-first order from the root; joints never reached sit on a cycle.
        let mut order = vec![roots[0]];
        let mut head = 0;
        while head < order.len() {
            let p = order[head];
            head += 1;
            order.extend((0..n).filter(|&j| joints[j].parent == Some(p)));
        }
        if order.len() != n {
            return Err(Error::Skeleton("parent links contain a cycle".into()));
        }
        let mut new_index = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        let joints = order
            .iter()
            .map(|&old| {
                let j = &joints[old];
                Joint {
                    name: j.name.clone(),
                    parent: j.parent.map(|p| new_index[p]),
                    offset: j.offset,
                }
            })
            .collect();
        Ok(Skeleton {
            joints,
            root_position,
        })
    }

    /// Eight-joint upper body: root, spine, neck, head and two 2-joint arms.
    pub fn upper_body() -> Self {
        let j = |name: &str, parent: Option<usize>, offset: [f64; 3]| Joint {
            name: name.into(),
            parent,
            offset,
        };
        Skeleton::new(
            vec![
                j("root", None, [0.0, 0.0, 0.0]),
                j("spine", Some(0), [0.0, 0.25, 0.0]),
                j("neck", Some(1), [0.0, 0.25, 0.0]),
                j("head", Some(2), [0.0, 0.15, 0.0]),
                j("l_upper_arm", Some(2), [0.3, -0.05, 0.0]),
                j("l_forearm", Some(4), [0.25, 0.0, 0.0]),
                j("r_upper_arm", Some(2), [-0.3, -0.05, 0.0]),
                j("r_forearm", Some(6), [-0.25, 0.0, 0.0]),
            ],
            [0.0, 1.0, 0.0],
        )
        .expect("static skeleton")
    }

    /// Serial chain of `n` joints, each offset `bone` from its parent.
    pub fn chain(n: usize, bone: [f64; 3]) -> Result<Self> {
        let joints = (0..n)
            .map(|i| Joint {
                name: format!("j{i}"),
                parent: i.checked_sub(1),
                offset: if i == 0 { [0.0; 3] } else { bone },
            })
            .collect();
        Skeleton::new(joints, [0.0; 3])
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.joints[j].parent
    }

    pub fn offset(&self, j: usize) -> [f64; 3] {
        self.joints[j].offset
    }

    pub fn root_position(&self) -> [f64; 3] {
        self.root_position
    }

    /// Joint positions with every rotation at identity.
    pub fn rest_positions(&self) -> Vec<[f64; 3]> {
        let mut pos = vec![self.root_position; self.joint_count()];
        for j in 1..self.joint_count() {
            let p = pos[self.parent(j).expect("non-root")];
            let s = self.offset(j);
            pos[j] = [p[0] + s[0], p[1] + s[1], p[2] + s[2]];
        }
        pos
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let raw: Skeleton = serde_json::from_str(&text).map_err(Error::json(path))?;
        Skeleton::new(raw.joints, raw.root_position)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(Error::json(path))?;
        std::fs::write(path, text).map_err(Error::io(path))
    }
}

/// Proper rotation matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(pub [[f64; 3]; 3]);

impl Rotation {
    pub const IDENTITY: Rotation = Rotation([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Rodrigues formula; `axis` need not be normalized.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Rotation {
        let n = norm3(axis);
        let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Rotation([
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ])
    }

    pub fn mul(&self, other: &Rotation) -> Rotation {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        Rotation(out)
    }

    pub fn transpose(&self) -> Rotation {
        let m = self.0;
        Rotation([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn determinant(&self) -> f64 {
        let m = self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// `RᵀR = I` and `det R = 1`, both within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let rtr = self.transpose().mul(self);
        let orthonormal = (0..3).all(|i| {
            (0..3).all(|j| {
                let target = if i == j { 1.0 } else { 0.0 };
                (rtr.0[i][j] - target).abs() <= tol
            })
        });
        orthonormal && (self.determinant() - 1.0).abs() <= tol
    }

    /// First two columns, flattened column by column.
    pub fn to_rot6d(&self) -> [f64; 6] {
        let m = self.0;
        [m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]]
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Gram-Schmidt decoding of a 6D rotation into a matrix whose columns are
/// `normalize(a)`, `normalize(b - <b,c1> c1)` and their cross product.
pub fn rot6d_to_matrix(r: &[f64; 6]) -> Result<Rotation> {
    let a = [r[0], r[1], r[2]];
    let b = [r[3], r[4], r[5]];
    let na = norm3(a);
    if !(na > DEGENERATE_NORM) {
        return Err(Error::DegenerateRotation { index: 0 });
    }
    let c1 = [a[0] / na, a[1] / na, a[2] / na];
    let d = dot3(b, c1);
    let u = [b[0] - d * c1[0], b[1] - d * c1[1], b[2] - d * c1[2]];
    let nu = norm3(u);
    if !(nu > DEGENERATE_NORM) {
        return Err(Error::DegenerateRotation { index: 0 });
    }
    let c2 = [u[0] / nu, u[1] / nu, u[2] / nu];
    let c3 = cross3(c1, c2);
    Ok(Rotation([
        [c1[0], c2[0], c3[0]],
        [c1[1], c2[1], c3[1]],
        [c1[2], c2[2], c3[2]],
    ]))
}

/// Angle of `R · R̂⁻¹`, with the cosine clamped to `[-1+ε, 1-ε]`.
pub fn geodesic_distance(r: &Rotation, r_hat: &Rotation) -> f64 {
    let trace: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| r.0[i][j] * r_hat.0[i][j]).sum();
    ((trace - 1.0) / 2.0).clamp(-1.0 + ACOS_EPS, 1.0 - ACOS_EPS).acos()
}

/// What to do with degenerate 6D inputs on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegeneratePolicy {
    /// Validation paths: report the offending element.
    Reject,
    /// Training: nudge by `1e-6` along the canonical basis and count it.
    Jitter,
}

fn half_norms(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut na = Vec::with_capacity(values.len() / 6);
    let mut nu = Vec::with_capacity(values.len() / 6);
    for r in values.chunks_exact(6) {
        let a = [r[0], r[1], r[2]];
        let b = [r[3], r[4], r[5]];
        let n = norm3(a);
        na.push(n);
        if n > DEGENERATE_NORM {
            let c1 = [a[0] / n, a[1] / n, a[2] / n];
            let d = dot3(b, c1);
            nu.push(norm3([b[0] - d * c1[0], b[1] - d * c1[1], b[2] - d * c1[2]]));
        } else {
            nu.push(0.0);
        }
    }
    (na, nu)
}

fn degenerate_elements(values: &[f64]) -> Vec<usize> {
    let (na, nu) = half_norms(values);
    (0..na.len())
        .filter(|&i| !(na[i] > DEGENERATE_NORM && nu[i] > DEGENERATE_NORM))
        .collect()
}

fn sum_last_keep<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let mut shape = x.shape();
    let last = shape.len() - 1;
    shape[last] = 1;
    Ok(x.sum_axes(&[last])?.reshape(&shape)?)
}

fn normalize_last<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let norm = sum_last_keep(x.square()?)?.sqrt()?;
    Ok(x.div(norm)?)
}

/// Differentiable 6D decoding: `[..., 6]` to `[..., 3, 3]`.
pub fn rot6d_to_matrix_var<'t>(x: Var<'t>, policy: DegeneratePolicy) -> Result<Var<'t>> {
    let shape = x.shape();
    if shape.last() != Some(&6) {
        return Err(Error::Shape(format!("6D rotations need a trailing axis of 6, got {shape:?}")));
    }
    let mut x = x;
    let bad = degenerate_elements(x.value().data());
    if let Some(&first) = bad.first() {
        match policy {
            DegeneratePolicy::Reject => return Err(Error::DegenerateRotation { index: first }),
            DegeneratePolicy::Jitter => {
                DEGENERATE_FALLBACKS.fetch_add(bad.len() as u64, Ordering::Relaxed);
                let mut jitter = Array::zeros(shape.clone());
                for &i in &bad {
                    let d = jitter.data_mut();
                    d[i * 6] += JITTER;
                    d[i * 6 + 4] += JITTER;
                    d[i * 6 + 5] += JITTER;
                }
                x = x.add(x.tape().constant(jitter))?;
                if let Some(&still) = degenerate_elements(x.value().data()).first() {
                    return Err(Error::DegenerateRotation { index: still });
                }
            }
        }
    }
    let axis = shape.len() - 1;
    let c1 = normalize_last(x.slice(axis, 0, 3)?)?;
    let b = x.slice(axis, 3, 3)?;
    let proj = sum_last_keep(b.mul(c1)?)?;
    let c2 = normalize_last(b.sub(c1.mul(proj)?)?)?;
    let comp = |v: Var<'t>, i: usize| v.slice(axis, i, 1);
    let (x1, y1, z1) = (comp(c1, 0)?, comp(c1, 1)?, comp(c1, 2)?);
    let (x2, y2, z2) = (comp(c2, 0)?, comp(c2, 1)?, comp(c2, 2)?);
    let c3 = concat(
        &[
            y1.mul(z2)?.sub(z1.mul(y2)?)?,
            z1.mul(x2)?.sub(x1.mul(z2)?)?,
            x1.mul(y2)?.sub(y1.mul(x2)?)?,
        ],
        axis,
    )?;
    let mut col_shape = shape.clone();
    col_shape[axis] = 3;
    col_shape.push(1);
    let cols = [c1, c2, c3]
        .iter()
        .map(|c| c.reshape(&col_shape))
        .collect::<ndgrad::Result<Vec<_>>>()?;
    Ok(concat(&cols, axis + 1)?)
}

/// Differentiable geodesic distance between stacks of rotation matrices
/// `[..., 3, 3]`; returns `[...]`.
pub fn geodesic_var<'t>(r: Var<'t>, r_hat: Var<'t>) -> Result<Var<'t>> {
    let rank = r.shape().len();
    if rank < 2 || r.shape() != r_hat.shape() {
        return Err(Error::Shape(format!("geodesic: {:?} vs {:?}", r.shape(), r_hat.shape())));
    }
    let trace = r.mul(r_hat)?.sum_axes(&[rank - 2, rank - 1])?;
    Ok(trace
        .add_scalar(-1.0)?
        .scale(0.5)?
        .clamp(-1.0 + ACOS_EPS, 1.0 - ACOS_EPS)?
        .acos()?)
}

/// Differentiable forward kinematics: local 6D rotations `[..., J, 6]` to
/// joint positions `[..., J, 3]`.
pub fn fk_var<'t>(skeleton: &Skeleton, rot6d: Var<'t>, policy: DegeneratePolicy) -> Result<Var<'t>> {
    let shape = rot6d.shape();
    let rank = shape.len();
    if rank < 2 || shape[rank - 1] != 6 || shape[rank - 2] != skeleton.joint_count() {
        return Err(Error::Shape(format!(
            "FK expects [..., {}, 6], got {shape:?}",
            skeleton.joint_count()
        )));
    }
    let tape = rot6d.tape();
    let jaxis = rank - 2;
    let local = rot6d_to_matrix_var(rot6d, policy)?;
    let mut lead: Vec<usize> = shape[..jaxis].to_vec();
    lead.push(1);
    let mut pos_shape = lead.clone();
    pos_shape.push(3);

    let root = skeleton.root_position();
    let root_pos = tape.constant(Array::from_fn(pos_shape.clone(), |i| root[i % 3]));
    let mut global: Vec<Var<'t>> = Vec::with_capacity(skeleton.joint_count());
    let mut positions: Vec<Var<'t>> = Vec::with_capacity(skeleton.joint_count());
    for j in 0..skeleton.joint_count() {
        let l = local.slice(jaxis, j, 1)?;
        match skeleton.parent(j) {
            None => {
                global.push(l);
                positions.push(root_pos);
            }
            Some(p) => {
                let g = global[p].matmul(l)?;
                let s = tape.constant(Array::new(vec![3, 1], skeleton.offset(j).to_vec())?);
                let bone = g.matmul(s)?.reshape(&pos_shape)?;
                positions.push(positions[p].add(bone)?);
                global.push(g);
            }
        }
    }
    Ok(concat(&positions, jaxis)?)
}

/// Forward kinematics on plain arrays, `[T, J, 6]` to `[T, J, 3]`.
pub fn forward_kinematics(skeleton: &Skeleton, rot6d: &Array) -> Result<Array> {
    let tape = Tape::new();
    let out = fk_var(skeleton, tape.constant(rot6d.clone()), DegeneratePolicy::Reject)?;
    let value = out.value();
    Ok((*value).clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionMode {
    /// Local 6D joint rotations driven through FK.
    #[serde(rename = "3d")]
    Rotational3d,
    /// Root-relative planar joint positions.
    #[serde(rename = "2d")]
    Positional2d,
}

impl MotionMode {
    /// Values per joint per frame.
    pub fn channels(self) -> usize {
        match self {
            MotionMode::Rotational3d => 6,
            MotionMode::Positional2d => 2,
        }
    }

    /// Coordinates per joint position.
    pub fn position_dims(self) -> usize {
        match self {
            MotionMode::Rotational3d => 3,
            MotionMode::Positional2d => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionMode::Rotational3d => "3d",
            MotionMode::Positional2d => "2d",
        }
    }
}

/// Per-frame, per-joint pose data: `values` is `[T, J, channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    mode: MotionMode,
    skeleton: Option<Arc<Skeleton>>,
    values: Array,
    frame_rate: f64,
}

impl MotionSequence {
    pub fn rotational(skeleton: Arc<Skeleton>, rot6d: Array, frame_rate: f64) -> Result<Self> {
        Self::build(MotionMode::Rotational3d, Some(skeleton), rot6d, frame_rate)
    }

    pub fn positional(positions: Array, frame_rate: f64) -> Result<Self> {
        Self::build(MotionMode::Positional2d, None, positions, frame_rate)
    }

    pub fn new(mode: MotionMode, skeleton: Option<Arc<Skeleton>>, values: Array, frame_rate: f64) -> Result<Self> {
        Self::build(mode, skeleton, values, frame_rate)
    }

    fn build(mode: MotionMode, skeleton: Option<Arc<Skeleton>>, values: Array, frame_rate: f64) -> Result<Self> {
        let shape = values.shape();
        if shape.len() != 3 || shape[2] != mode.channels() {
            return Err(Error::Shape(format!(
                "{} motion needs [T, J, {}], got {shape:?}",
                mode.name(),
                mode.channels()
            )));
        }
        if shape[0] < 2 {
            return Err(Error::Shape("motion needs at least 2 frames".into()));
        }
        if !(frame_rate > 0.0) {
            return Err(Error::Config(format!("frame rate {frame_rate} must be positive")));
        }
        match (&skeleton, mode) {
            (Some(sk), MotionMode::Rotational3d) if sk.joint_count() == shape[1] => {}
            (Some(sk), MotionMode::Rotational3d) => {
                return Err(Error::Shape(format!(
                    "skeleton has {} joints, motion has {}",
                    sk.joint_count(),
                    shape[1]
                )))
            }
            (None, MotionMode::Rotational3d) => {
                return Err(Error::Skeleton("3d motion requires a skeleton".into()))
            }
            (Some(_), MotionMode::Positional2d) => {
                return Err(Error::Skeleton("2d motion carries no skeleton".into()))
            }
            (None, MotionMode::Positional2d) => {}
        }
        Ok(MotionSequence {
            mode,
            skeleton,
            values,
            frame_rate,
        })
    }

    pub fn mode(&self) -> MotionMode {
        self.mode
    }

    pub fn skeleton(&self) -> Option<&Arc<Skeleton>> {
        self.skeleton.as_ref()
    }

    pub fn values(&self) -> &Array {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn joints(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn require_mode(&self, mode: MotionMode) -> Result<()> {
        if self.mode == mode {
            Ok(())
        } else {
            Err(Error::Mode {
                expected: mode.name().into(),
                found: self.mode.name().into(),
            })
        }
    }

    /// Joint positions `[T, J, 3]` (3d, via FK) or `[T, J, 2]` (2d).
    pub fn positions(&self) -> Result<Array> {
        match (&self.skeleton, self.mode) {
            (Some(sk), MotionMode::Rotational3d) => forward_kinematics(sk, &self.values),
            _ => Ok(self.values.clone()),
        }
    }

    /// Frames `[start, start + len)`.
    pub fn crop(&self, start: usize, len: usize) -> Result<Self> {
        let t = self.frames();
        if len < 2 || start + len > t {
            return Err(Error::Window {
                start,
                end: start + len,
                len: t,
            });
        }
        let per_frame = self.joints() * self.mode.channels();
        let data = self.values.data()[start * per_frame..(start + len) * per_frame].to_vec();
        let values = Array::new(vec![len, self.joints(), self.mode.channels()], data)?;
        Self::build(self.mode, self.skeleton.clone(), values, self.frame_rate)
    }
}
