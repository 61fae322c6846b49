use gesturelab::data::{generate_synthetic, min_mode_separation, mode_targets, GestureDataset, SynthSpec};
use gesturelab::kinematics::{rot6d_to_matrix, MotionMode};
use gesturelab::metrics::{joint_speeds, l1_metric};
use std::sync::OnceLock;

fn desk() -> &'static GestureDataset {
    static DS: OnceLock<GestureDataset> = OnceLock::new();
    DS.get_or_init(|| generate_synthetic(&SynthSpec::default()).unwrap())
}

#[test]
fn generation_is_deterministic_and_counted() {
    let spec = SynthSpec {
        classes: 2,
        modes: 2,
        sequences_per_mode: 10,
        seconds: 2.0,
        ..SynthSpec::default()
    };
    let a = generate_synthetic(&spec).unwrap();
    assert_eq!(a.len(), 40);
    assert_eq!(a, generate_synthetic(&spec).unwrap());
    assert_ne!(a, generate_synthetic(&SynthSpec { seed: 1, ..spec }).unwrap());
}

#[test]
fn modes_are_separated_beyond_the_noise() {
    let spec = SynthSpec::default();
    let ds = desk();
    assert!(min_mode_separation(&spec, &ds.skeleton).unwrap() >= 4.0 * spec.noise);
    // Also on every generated sequence's own beats.
    for s in &ds.sequences {
        let labels = s.labels.as_ref().unwrap();
        let modes = mode_targets(&spec, &ds.skeleton, labels, s.frames()).unwrap();
        let pos: Vec<_> = modes.iter().map(|m| m.positions().unwrap()).collect();
        for a in 0..pos.len() {
            for b in a + 1..pos.len() {
                assert!(l1_metric(&pos[a], &pos[b]).unwrap() >= 4.0 * spec.noise, "{}", s.id);
            }
        }
    }
    let crowded = SynthSpec { noise: 1.0, ..spec };
    assert!(generate_synthetic(&crowded).is_err());
}

#[test]
fn rotations_are_valid_and_speeds_physical() {
    let ds = desk();
    assert_eq!(ds.mode, MotionMode::Rotational3d);
    for s in &ds.sequences {
        for r in s.motion.values().data().chunks_exact(6) {
            let m = rot6d_to_matrix(r.try_into().unwrap()).unwrap();
            assert!(m.is_valid(1e-6));
        }
        let worst = joint_speeds(&s.motion.positions().unwrap()).unwrap().into_iter().fold(0.0, f64::max);
        assert!(worst < 2.0, "{}: {worst} m/frame", s.id);
    }
}

/// Every interior beat has a local peak of wrist speed within two frames.
#[test]
fn beats_line_up_with_velocity_peaks() {
    let ds = desk();
    let j = ds.skeleton.joint_count();
    let wrist = ds.skeleton.joints().iter().position(|x| x.name == "l_forearm").unwrap();
    for s in &ds.sequences {
        let sp = joint_speeds(&s.motion.positions().unwrap()).unwrap();
        let speed = |f: usize| sp[f * j + wrist];
        let n = sp.len() / j;
        // A peak needs a frame on each side, so beats at the clip edges are skipped.
        for &b in s.labels.as_ref().unwrap().beats.iter().filter(|&&b| b >= 3 && b + 3 < n) {
            let (lo, hi) = (b - 2, b + 2);
            let peak = (lo..=hi).any(|f| speed(f) >= speed(f - 1) && speed(f) >= speed(f + 1));
            assert!(peak, "{} beat {b}", s.id);
        }
    }
}

#[test]
fn features_and_motion_share_frames() {
    for s in &desk().sequences {
        assert_eq!(s.feature.frames(), s.motion.frames(), "{}", s.id);
    }
}

#[test]
fn dataset_files_round_trip() {
    let spec = SynthSpec {
        classes: 2,
        sequences_per_mode: 2,
        seconds: 1.5,
        ..SynthSpec::default()
    };
    let ds = generate_synthetic(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = ds.save(dir.path()).unwrap();
    let back = GestureDataset::load(&manifest).unwrap();
    assert_eq!(back.len(), ds.len());
    for (a, b) in ds.sequences.iter().zip(&back.sequences) {
        assert_eq!(a.motion, b.motion);
        assert_eq!(a.feature, b.feature);
        assert_eq!(a.labels, b.labels);
    }
}
