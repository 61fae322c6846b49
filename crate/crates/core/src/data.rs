//! Labeled one-to-many synthetic corpus, cropping and motion/manifest files.
//!
//! Each audio class has `K` gesture modes. A sequence draws its beat times
//! from its own seed; the audio carries the class signature and a burst on
//! every beat, and the motion swings the arms through a mode-specific pose
//! with a velocity peak on every beat. Nothing in the audio reveals the mode.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndgrad::Array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{beat_times, log_mel, synth_audio_with_beats, AudioClip, AudioFeature};
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, MotionMode, MotionSequence, Rotation, Skeleton};

/// Width of a beat flick in frames.
const FLICK_WIDTH: f64 = 3.0;
/// Meters of joint displacement per radian of arm rotation, for scaling
/// angle noise to the requested position noise.
const ARM_LEVER: f64 = 0.3;

/// SplitMix64 finalizer over `a ^ b·φ`.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: usize,
    pub modes: usize,
    pub sequences_per_mode: usize,
    /// Of each `sequences_per_mode`, how many go to the test split.
    pub test_per_mode: usize,
    pub seconds: f64,
    pub frame_rate: f64,
    pub motion_mode: MotionMode,
    /// Per-sequence pose jitter, meters.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 4,
            modes: 2,
            sequences_per_mode: 8,
            test_per_mode: 1,
            seconds: 6.0,
            frame_rate: 30.0,
            motion_mode: MotionMode::Rotational3d,
            noise: 0.01,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.modes < 2 {
            return Err(Error::Config("need at least 2 classes and 2 modes".into()));
        }
        if self.sequences_per_mode == 0 || self.test_per_mode >= self.sequences_per_mode {
            return Err(Error::Config("each mode needs at least one training sequence".into()));
        }
        if !(self.seconds >= 1.0) || !(self.frame_rate > 0.0) || !(self.noise >= 0.0) {
            return Err(Error::Config("seconds >= 1, frame_rate > 0 and noise >= 0 required".into()));
        }
        Ok(())
    }

    pub fn sequence_count(&self) -> usize {
        self.classes * self.modes * self.sequences_per_mode
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Ground truth behind a synthetic sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub class: usize,
    pub mode: usize,
    pub seed: u64,
    /// Beat frames.
    pub beats: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub split: Split,
    pub labels: Option<Labels>,
    pub audio: Option<AudioClip>,
    pub feature: AudioFeature,
    pub motion: MotionSequence,
}

impl Sequence {
    pub fn frames(&self) -> usize {
        self.motion.frames()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GestureDataset {
    pub skeleton: Arc<Skeleton>,
    pub frame_rate: f64,
    pub mode: MotionMode,
    pub spec: Option<SynthSpec>,
    pub sequences: Vec<Sequence>,
}

/// Per-(class, mode) pose program. Angles in radians.
#[derive(Debug, Clone, Copy)]
struct ModePose {
    /// Upper-arm abduction about z (left arm; mirrored on the right).
    shoulder_z: f64,
    /// Upper-arm swing about y.
    shoulder_y: f64,
    elbow: f64,
    /// Flick amplitudes for left arm, right arm, head nod.
    amp: [f64; 3],
}

fn mode_pose(class: usize, mode: usize, modes: usize) -> ModePose {
    let u = mode as f64 / (modes - 1) as f64;
    let strength = 0.3 + 0.08 * (class % 4) as f64;
    let (left, right) = if class % 2 == 0 { (1.0, 1.0) } else { (1.0, 0.35) };
    ModePose {
        shoulder_z: -1.0 + 1.5 * u,
        shoulder_y: if mode % 2 == 0 { -0.25 } else { 0.35 },
        elbow: 0.2 + 0.6 * u,
        amp: [strength * left, strength * right, 0.08 + 0.02 * (class % 3) as f64],
    }
}

/// Odd pulse with its steepest slope at `τ = 0` and extrema ±1 at `±w`.
fn flick(tau: f64) -> f64 {
    let w = FLICK_WIDTH;
    (tau / w) * (0.5 - tau * tau / (2.0 * w * w)).exp()
}

fn beat_drive(t: usize, beats: &[usize]) -> f64 {
    beats.iter().map(|&b| flick(t as f64 - b as f64)).sum()
}

fn rz(a: f64) -> Rotation {
    Rotation::from_axis_angle([0.0, 0.0, 1.0], a)
}

fn ry(a: f64) -> Rotation {
    Rotation::from_axis_angle([0.0, 1.0, 0.0], a)
}

fn rx(a: f64) -> Rotation {
    Rotation::from_axis_angle([1.0, 0.0, 0.0], a)
}

/// Local 6D rotations `[T, 8, 6]` for the upper-body skeleton. `jitter`
/// offsets the five animated angles for the whole sequence.
fn pose_track(pose: ModePose, beats: &[usize], frames: usize, jitter: [f64; 5]) -> Array {
    let mut out = Vec::with_capacity(frames * 8 * 6);
    for t in 0..frames {
        let d = beat_drive(t, beats);
        let lz = pose.shoulder_z + pose.amp[0] * d + jitter[0];
        let rzn = pose.shoulder_z + pose.amp[1] * d + jitter[1];
        let sy = pose.shoulder_y + jitter[2];
        let elbow = pose.elbow + 0.5 * pose.amp[0] * d + jitter[3];
        let nod = pose.amp[2] * d + jitter[4];
        let joints = [
            Rotation::IDENTITY,
            Rotation::IDENTITY,
            Rotation::IDENTITY,
            rx(nod),
            rz(lz).mul(&ry(sy)),
            rz(elbow),
            rz(-rzn).mul(&ry(-sy)),
            rz(-elbow),
        ];
        for r in joints {
            out.extend_from_slice(&r.to_rot6d());
        }
    }
    Array::new(vec![frames, 8, 6], out).expect("consistent track shape")
}

/// Root-relative x-y projection of FK positions, `[T, J, 2]`.
pub fn project_2d(skeleton: &Skeleton, positions: &Array) -> Result<Array> {
    let (t, j) = (positions.shape()[0], positions.shape()[1]);
    let root = skeleton.root_position();
    let p = positions.data();
    Ok(Array::from_fn(vec![t, j, 2], |i| {
        let (tj, c) = (i / 2, i % 2);
        p[tj * 3 + c] - root[c]
    }))
}

fn make_motion(
    skeleton: &Arc<Skeleton>,
    mode: MotionMode,
    rot6d: Array,
    frame_rate: f64,
) -> Result<MotionSequence> {
    match mode {
        MotionMode::Rotational3d => MotionSequence::rotational(skeleton.clone(), rot6d, frame_rate),
        MotionMode::Positional2d => {
            let pos = forward_kinematics(skeleton, &rot6d)?;
            MotionSequence::positional(project_2d(skeleton, &pos)?, frame_rate)
        }
    }
}

/// Clean trajectories of every mode of `labels.class` on the beats of
/// `labels`, each `frames` long.
pub fn mode_targets(
    spec: &SynthSpec,
    skeleton: &Arc<Skeleton>,
    labels: &Labels,
    frames: usize,
) -> Result<Vec<MotionSequence>> {
    (0..spec.modes)
        .map(|m| {
            let track = pose_track(mode_pose(labels.class, m, spec.modes), &labels.beats, frames, [0.0; 5]);
            make_motion(skeleton, spec.motion_mode, track, spec.frame_rate)
        })
        .collect()
}

fn generate_one(spec: &SynthSpec, skeleton: &Arc<Skeleton>, index: usize) -> Result<Sequence> {
    let per_class = spec.modes * spec.sequences_per_mode;
    let class = index / per_class;
    let mode = (index % per_class) / spec.sequences_per_mode;
    let rep = index % spec.sequences_per_mode;
    let seed = mix_seed(spec.seed, index as u64);
    let beat_secs = beat_times(spec.seconds, seed);
    let clip = synth_audio_with_beats(class, spec.seconds, &beat_secs, seed)?;
    let feature = log_mel(&clip, spec.frame_rate)?;
    let frames = feature.frames();
    let beats: Vec<usize> = beat_secs
        .iter()
        .map(|b| (b * spec.frame_rate).round() as usize)
        .filter(|&b| b < frames)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x6a17));
    let sigma = spec.noise / ARM_LEVER;
    let jitter: [f64; 5] = if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
        std::array::from_fn(|_| n.sample(&mut rng))
    } else {
        [0.0; 5]
    };
    let track = pose_track(mode_pose(class, mode, spec.modes), &beats, frames, jitter);
    let motion = make_motion(skeleton, spec.motion_mode, track, spec.frame_rate)?;
    let split = if rep >= spec.sequences_per_mode - spec.test_per_mode {
        Split::Test
    } else {
        Split::Train
    };
    Ok(Sequence {
        id: format!("c{class}_m{mode}_{rep:03}"),
        split,
        labels: Some(Labels {
            class,
            mode,
            seed,
            beats,
        }),
        audio: Some(clip),
        feature,
        motion,
    })
}

/// Smallest mean per-frame distance between two modes of one class over a
/// reference beat track.
pub fn min_mode_separation(spec: &SynthSpec, skeleton: &Arc<Skeleton>) -> Result<f64> {
    let frames = (spec.seconds * spec.frame_rate) as usize;
    let beats: Vec<usize> = (8..frames).step_by(18).collect();
    let mut worst = f64::INFINITY;
    for class in 0..spec.classes {
        let labels = Labels {
            class,
            mode: 0,
            seed: 0,
            beats: beats.clone(),
        };
        let targets = mode_targets(spec, skeleton, &labels, frames)?;
        let pos: Vec<Array> = targets.iter().map(|m| m.positions()).collect::<Result<_>>()?;
        for a in 0..pos.len() {
            for b in a + 1..pos.len() {
                worst = worst.min(crate::metrics::l1_metric(&pos[a], &pos[b])?);
            }
        }
    }
    Ok(worst)
}

/// Builds the labeled corpus; deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<GestureDataset> {
    spec.validate()?;
    let skeleton = Arc::new(Skeleton::upper_body());
    let sep = min_mode_separation(spec, &skeleton)?;
    if sep < 4.0 * spec.noise {
        return Err(Error::Dataset(format!(
            "modes separated by {sep:.4}, need at least 4 x noise = {:.4}",
            4.0 * spec.noise
        )));
    }
    let sequences = (0..spec.sequence_count())
        .into_par_iter()
        .map(|i| generate_one(spec, &skeleton, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(GestureDataset {
        skeleton,
        frame_rate: spec.frame_rate,
        mode: spec.motion_mode,
        spec: Some(spec.clone()),
        sequences,
    })
}

impl GestureDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sequence> {
        self.sequences.iter().filter(move |s| s.split == split)
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    /// Aligned feature and motion frames `[start, start + len)`.
    pub fn crop(&self, seq: usize, start: usize, len: usize) -> Result<(AudioFeature, MotionSequence)> {
        let s = self
            .sequences
            .get(seq)
            .ok_or_else(|| Error::Dataset(format!("no sequence {seq}")))?;
        let t = s.frames();
        if len < 2 || start + len > t {
            return Err(Error::Window {
                start,
                end: start + len,
                len: t,
            });
        }
        Ok((s.feature.crop(start, len)?, s.motion.crop(start, len)?))
    }

    /// Writes `manifest.json`, `skeleton.json` and per-sequence WAV,
    /// feature and motion files under `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        self.skeleton.save(&dir.join("skeleton.json"))?;
        let mut entries = Vec::with_capacity(self.sequences.len());
        for s in &self.sequences {
            let wav = s
                .audio
                .as_ref()
                .map(|a| -> Result<String> {
                    let name = format!("{}.wav", s.id);
                    a.write_wav(&dir.join(&name))?;
                    Ok(name)
                })
                .transpose()?;
            let features = format!("{}.mel.f64", s.id);
            s.feature.save(&dir.join(&features))?;
            let motion = format!("{}.motion.json", s.id);
            save_motion(&dir.join(&motion), &s.motion, Some("skeleton.json"), true)?;
            entries.push(ManifestEntry {
                id: s.id.clone(),
                split: s.split,
                labels: s.labels.clone(),
                wav,
                features,
                motion,
            });
        }
        let manifest = Manifest {
            frame_rate: self.frame_rate,
            mode: self.mode,
            skeleton: "skeleton.json".into(),
            spec: self.spec.clone(),
            sequences: entries,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(Error::json(&path))?;
        std::fs::write(&path, text).map_err(Error::io(&path))?;
        Ok(path)
    }

    /// Loads a dataset from its manifest; WAV files are read when listed.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest_path).map_err(Error::io(manifest_path))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(Error::json(manifest_path))?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let skeleton = Arc::new(Skeleton::load(&dir.join(&manifest.skeleton))?);
        let sequences = manifest
            .sequences
            .iter()
            .map(|e| {
                let feature = AudioFeature::load(&dir.join(&e.features))?;
                let motion = load_motion(&dir.join(&e.motion), Some(&skeleton))?;
                if motion.mode() != manifest.mode {
                    return Err(Error::Mode {
                        expected: manifest.mode.name().into(),
                        found: motion.mode().name().into(),
                    });
                }
                if feature.frames() != motion.frames() {
                    return Err(Error::Dataset(format!(
                        "{}: {} feature frames vs {} motion frames",
                        e.id,
                        feature.frames(),
                        motion.frames()
                    )));
                }
                let audio = e.wav.as_ref().map(|w| AudioClip::read_wav(&dir.join(w))).transpose()?;
                Ok(Sequence {
                    id: e.id.clone(),
                    split: e.split,
                    labels: e.labels.clone(),
                    audio,
                    feature,
                    motion,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GestureDataset {
            skeleton,
            frame_rate: manifest.frame_rate,
            mode: manifest.mode,
            spec: manifest.spec,
            sequences,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Labels>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wav: Option<String>,
    features: String,
    motion: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    frame_rate: f64,
    mode: MotionMode,
    skeleton: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec: Option<SynthSpec>,
    sequences: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MotionFile {
    mode: MotionMode,
    frame_rate: f64,
    skeleton_ref: Option<String>,
    frames: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    positions: Option<Vec<Vec<Vec<f64>>>>,
}

fn nest(a: &Array) -> Vec<Vec<Vec<f64>>> {
    let (t, j, d) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    (0..t)
        .map(|ti| {
            (0..j)
                .map(|ji| a.data()[(ti * j + ji) * d..(ti * j + ji + 1) * d].to_vec())
                .collect()
        })
        .collect()
}

fn flatten(frames: &[Vec<Vec<f64>>], path: &Path) -> Result<Array> {
    let bad = || Error::Dataset(format!("{}: ragged motion frames", path.display()));
    let t = frames.len();
    let j = frames.first().map(Vec::len).ok_or_else(bad)?;
    let d = frames[0].first().map(Vec::len).ok_or_else(bad)?;
    let mut data = Vec::with_capacity(t * j * d);
    for f in frames {
        if f.len() != j {
            return Err(bad());
        }
        for v in f {
            if v.len() != d {
                return Err(bad());
            }
            data.extend_from_slice(v);
        }
    }
    Ok(Array::new(vec![t, j, d], data)?)
}

/// Motion JSON; with `export_positions`, FK positions ride along for viewers.
pub fn save_motion(path: &Path, motion: &MotionSequence, skeleton_ref: Option<&str>, export_positions: bool) -> Result<()> {
    let positions = if export_positions && motion.mode() == MotionMode::Rotational3d {
        Some(nest(&motion.positions()?))
    } else {
        None
    };
    let file = MotionFile {
        mode: motion.mode(),
        frame_rate: motion.frame_rate(),
        skeleton_ref: match motion.mode() {
            MotionMode::Rotational3d => skeleton_ref.map(str::to_owned),
            MotionMode::Positional2d => None,
        },
        frames: nest(motion.values()),
        positions,
    };
    let text = serde_json::to_string(&file).map_err(Error::json(path))?;
    std::fs::write(path, text).map_err(Error::io(path))
}

/// Reads motion JSON. A 3D file uses `skeleton` when given, otherwise its
/// `skeleton_ref` resolved next to the file.
pub fn load_motion(path: &Path, skeleton: Option<&Arc<Skeleton>>) -> Result<MotionSequence> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let file: MotionFile = serde_json::from_str(&text).map_err(Error::json(path))?;
    let values = flatten(&file.frames, path)?;
    match file.mode {
        MotionMode::Rotational3d => {
            let sk = match (skeleton, &file.skeleton_ref) {
                (Some(sk), _) => sk.clone(),
                (None, Some(r)) => Arc::new(Skeleton::load(&path.parent().unwrap_or(Path::new(".")).join(r))?),
                (None, None) => return Err(Error::Skeleton(format!("{}: 3d motion without skeleton", path.display()))),
            };
            MotionSequence::rotational(sk, values, file.frame_rate)
        }
        MotionMode::Positional2d => MotionSequence::positional(values, file.frame_rate),
    }
}
